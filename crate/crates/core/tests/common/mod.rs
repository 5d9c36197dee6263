#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use resalloc_core::network::{DerParams, EdgeParams, NodeParams};
use resalloc_core::{
    parse_network, Allocation, DistributionNetwork, NetworkInput, Scenario, SolveConfig, FIXTURE_4NODE,
};

pub fn fixture() -> NetworkInput {
    parse_network(FIXTURE_4NODE, "fixture").expect("bundled fixture parses")
}

/// Settings under which the fixture's reference costs hold.
pub fn fixture_config() -> SolveConfig {
    SolveConfig {
        droop_enabled: false,
        ..SolveConfig::default()
    }
}

pub fn named(input: &NetworkInput, name: &str) -> Allocation {
    input.allocation(name).expect("named allocation").clone()
}

pub fn scenario<'a>(input: &'a NetworkInput, name: &str) -> &'a Scenario {
    input
        .scenarios
        .as_ref()
        .expect("fixture scenarios")
        .iter()
        .find(|s| s.name == name)
        .expect("named scenario")
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Random radial network with node 0 as substation, `nodes` nodes in
/// total, and up to `max_ders` DERs.
pub fn random_network(rng: &mut ChaCha8Rng, nodes: usize, max_ders: usize) -> DistributionNetwork {
    let mut ns = vec![NodeParams::blank(0)];
    for i in 1..nodes {
        let mut n = NodeParams::blank(i);
        if rng.gen_bool(0.8) {
            n.pc_max = rng.gen_range(1..=8) as f64 / 10.0;
            n.qc_max = (n.pc_max * rng.gen_range(0..=5) as f64 / 10.0 * 100.0).round() / 100.0;
            n.gamma_min = [0.0, 0.25, 0.5, 1.0][rng.gen_range(0..4)];
            n.cost_shed = rng.gen_range(5..=12) as f64 * 100.0;
            n.cost_control = (n.cost_shed * rng.gen_range(0..=6) as f64 / 10.0).round();
        }
        n.site_weight = [0.0, 50.0, 100.0][rng.gen_range(0..3)];
        ns.push(n);
    }
    let mut edges = Vec::new();
    for i in 1..nodes {
        let parent = if i == 1 { 0 } else { rng.gen_range(0..i) };
        edges.push(EdgeParams {
            from: parent,
            to: i,
            resistance: rng.gen_range(1..=10) as f64 / 100.0,
            reactance: rng.gen_range(1..=20) as f64 / 100.0,
        });
    }
    let nd = rng.gen_range(1..=max_ders);
    // One setpoint per network: DERs idling in a shared island must agree
    // on the voltage when there is nothing to serve.
    let v_ref = [1.0, 1.02, 1.05][rng.gen_range(0..3)];
    let ders = (0..nd)
        .map(|d| DerParams {
            name: format!("g{}", d + 1),
            pg_max: rng.gen_range(2..=8) as f64 / 10.0,
            qg_max: Some(rng.gen_range(1..=4) as f64 / 10.0),
            pf_tan: None,
            droop_coeff: [0.0, 0.05][rng.gen_range(0..2)],
            v_ref,
        })
        .collect();
    let mut sites: Vec<usize> = (1..nodes).filter(|_| rng.gen_bool(0.7)).collect();
    if sites.is_empty() {
        sites.push(nodes - 1);
    }
    DistributionNetwork {
        name: "random".into(),
        nodes: ns,
        edges,
        substation: 0,
        candidate_sites: sites,
        ders,
        nominal_sq_voltage: 1.0,
    }
}

pub fn random_scenarios(rng: &mut ChaCha8Rng, dn: &DistributionNetwork, count: usize) -> Vec<Scenario> {
    (0..count)
        .map(|k| {
            let failed: BTreeSet<usize> = (0..dn.edges.len())
                .filter(|&e| dn.is_substation_edge(e) || rng.gen_bool(0.5))
                .collect();
            Scenario {
                name: format!("r{}", k + 1),
                failed,
                probability: 1.0 / count as f64,
            }
        })
        .collect()
}

/// Small random instance: network, scenarios, and budget.
pub fn random_instance(seed: u64) -> (DistributionNetwork, Vec<Scenario>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = rng.gen_range(3..=6);
    let dn = random_network(&mut rng, nodes, 2);
    let count = rng.gen_range(1..=4);
    let sc = random_scenarios(&mut rng, &dn, count);
    let budget = rng.gen_range(1..=dn.ders.len());
    (dn, sc, budget)
}
