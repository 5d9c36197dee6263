mod common;

use std::io::Write;

use common::*;
use resalloc_core::network::{validate_scenario, InputError};
use resalloc_core::*;

#[test]
fn fixture_is_valid() {
    let input = fixture();
    assert!(validate_network(&input.network).is_ok());
    for s in input.scenarios.as_ref().unwrap() {
        assert!(validate_scenario(&input.network, s).is_ok());
    }
}

/// Allocation count by brute force over every 0/1 assignment of the site
/// and DER-at-site variables, keeping those that satisfy the allocation
/// rules written out directly.
fn brute_force_count(num_sites: usize, num_ders: usize, budget: usize) -> usize {
    let len = num_sites + num_sites * num_ders;
    let mut count = 0;
    for mask in 0u32..(1 << len) {
        let bit = |i: usize| (mask >> i) & 1 == 1;
        let site = |u: usize| bit(u);
        let assign = |u: usize, d: usize| bit(num_sites + u * num_ders + d);
        let mut ok = true;
        // Each DER at most once.
        for d in 0..num_ders {
            ok &= (0..num_sites).filter(|&u| assign(u, d)).count() <= 1;
        }
        // DERs only at developed sites; developed sites hold a DER.
        for u in 0..num_sites {
            let any = (0..num_ders).any(|d| assign(u, d));
            ok &= any == site(u);
        }
        // Budget on assigned DERs.
        let total: usize = (0..num_sites)
            .map(|u| (0..num_ders).filter(|&d| assign(u, d)).count())
            .sum();
        ok &= total <= budget;
        if ok {
            count += 1;
        }
    }
    count
}

#[test]
fn allocation_count_matches_brute_force() {
    let dn = fixture().network;
    let all = enumerate_allocations(&dn, 2);
    assert_eq!(all.len(), brute_force_count(4, 2, 2));
    assert_eq!(all.len(), 25);
    for budget in 0..=2 {
        assert_eq!(
            enumerate_allocations(&dn, budget).len(),
            brute_force_count(4, 2, budget)
        );
    }
    assert_eq!(enumerate_allocations(&dn, 0), vec![Allocation::empty(4, 2)]);
    for a in &all {
        assert!(a.is_feasible(2));
    }
}

#[test]
fn named_allocations_are_enumerated() {
    let input = fixture();
    let all = enumerate_allocations(&input.network, 2);
    for name in ["A1", "A2", "A3"] {
        assert!(all.contains(&named(&input, name)), "{name}");
    }
}

#[test]
fn duplicated_edge_is_a_cycle() {
    let mut dn = fixture().network;
    dn.edges.push(dn.edges[1].clone());
    let rep = validate_network(&dn);
    assert!(rep.violations.iter().any(|v| v == "cycle detected"), "{rep}");
}

#[test]
fn site_at_substation_is_rejected() {
    let mut dn = fixture().network;
    dn.candidate_sites.push(0);
    let rep = validate_network(&dn);
    assert!(rep.violations.iter().any(|v| v == "site at substation"), "{rep}");
}

#[test]
fn sampling_extremes_and_determinism() {
    let dn = fixture().network;
    let ne = dn.edges.len();
    for s in sample_scenarios(&dn, &vec![1.0; ne], 5, 3) {
        assert_eq!(s.failed.len(), ne);
    }
    for s in sample_scenarios(&dn, &vec![0.0; ne], 5, 3) {
        assert_eq!(s.failed.iter().copied().collect::<Vec<_>>(), dn.substation_edges());
    }
    let a = sample_scenarios(&dn, &vec![0.4; ne], 8, 11);
    let b = sample_scenarios(&dn, &vec![0.4; ne], 8, 11);
    assert_eq!(a, b);
    let total: f64 = a.iter().map(|s| s.probability).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn loading_from_disk_and_error_context() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("net.json");
    std::fs::write(&good, FIXTURE_4NODE).unwrap();
    let input = load_network(&good).unwrap();
    assert_eq!(input.network.edges.len(), 4);

    let bad = dir.path().join("bad.json");
    let mut f = std::fs::File::create(&bad).unwrap();
    writeln!(f, "{{\n  \"nodes\": [\n    {{\"id\": 0,}}\n  ]\n}}").unwrap();
    match load_network(&bad) {
        Err(InputError::Syntax { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }

    let unknown = FIXTURE_4NODE.replacen("\"substation\"", "\"substaton\"", 1);
    let err = parse_network(&unknown, "x").unwrap_err();
    assert!(err.to_string().contains("substaton"), "{err}");

    let missing = dir.path().join("absent.json");
    assert!(matches!(load_network(&missing), Err(InputError::Io { .. })));
}

#[test]
fn magnitude_bounds_are_squared() {
    let text = FIXTURE_4NODE.replace("\"voltage_bounds\": \"squared\"", "\"voltage_bounds\": \"magnitude\"");
    let input = parse_network(&text, "mag").unwrap();
    let n = &input.network.nodes[2];
    assert!((n.v_load_min - 0.9025).abs() < 1e-12);
    assert!((n.v_load_max - 1.1025).abs() < 1e-12);
}

#[test]
fn bundled_feeder_is_a_valid_36_edge_radial_network() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/feeder_36node.json");
    let input = load_network(&path).unwrap();
    assert!(validate_network(&input.network).is_ok());
    assert_eq!(horizon(&input.network), 36);
    assert_eq!(input.network.ders.len(), 3);
}
