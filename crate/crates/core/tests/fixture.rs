mod common;

use std::collections::BTreeSet;

use common::*;
use resalloc_core::greedy::greedy_stage2;
use resalloc_core::lbd::{
    baseline_bora, baseline_sa, baseline_se, build_benders_cut, evaluate_allocation, solve_master,
    solve_subproblem_fixed, BendersCut, Stage2Engine,
};
use resalloc_core::metrics::{load_cost, load_value, system_performance};
use resalloc_core::stage2::{build_dispatch_mip, check_plan};
use resalloc_core::*;
use resalloc_milp::{solve_lp, solve_milp, MilpStatus};

const ENGINES: [Stage2Engine; 3] = [
    Stage2Engine::BranchAndBound { greedy_bound: false },
    Stage2Engine::BranchAndBound { greedy_bound: true },
    Stage2Engine::RepairDp,
];

fn reference_costs() -> Vec<(&'static str, &'static str, [f64; 4])> {
    vec![
        ("A1", "S1", [1000.0, 450.0, 450.0, 450.0]),
        ("A1", "S2", [1050.0, 450.0, 450.0, 450.0]),
        ("A1", "S3", [1900.0, 1000.0, 450.0, 450.0]),
        ("A3", "S1", [950.0, 450.0, 450.0, 450.0]),
        ("A3", "S2", [1550.0, 950.0, 450.0, 450.0]),
        ("A3", "S3", [1850.0, 950.0, 450.0, 450.0]),
        ("A2", "S1", [950.0; 4]),
        ("A2", "S2", [950.0; 4]),
        ("A2", "S3", [950.0; 4]),
    ]
}

#[test]
fn horizon_is_edge_count() {
    assert_eq!(horizon(&fixture().network), 4);
}

#[test]
fn reference_period_costs_under_every_engine() {
    let input = fixture();
    let dn = &input.network;
    let cfg = fixture_config();
    for (a, s, costs) in reference_costs() {
        for engine in ENGINES {
            let sol = solve_stage2(dn, &named(&input, a), scenario(&input, s), &cfg, engine).unwrap();
            let total: f64 = costs.iter().sum();
            assert!(rel_close(sol.value, total, 1e-6), "{a}/{s} {engine:?}: {}", sol.value);
            for k in 0..4 {
                assert!(
                    rel_close(sol.period_costs[k], costs[k], 1e-6),
                    "{a}/{s} k={k}: {:?}",
                    sol.period_costs
                );
            }
            assert!(sol.period_costs[4].abs() < 1e-6);
        }
    }
}

#[test]
fn optimal_plans_pass_the_independent_checker() {
    let input = fixture();
    let cfg = fixture_config();
    for (a, s, _) in reference_costs() {
        let alloc = named(&input, a);
        let sc = scenario(&input, s);
        let sol = solve_stage2(&input.network, &alloc, sc, &cfg, Stage2Engine::default()).unwrap();
        let v = check_plan(&input.network, &alloc, sc, &cfg, &sol.plan, 1e-6);
        assert!(v.is_empty(), "{a}/{s}: {v:?}");
    }
}

#[test]
fn empty_allocation_sheds_everything_before_reconnection() {
    let input = fixture();
    let dn = &input.network;
    let sub_only = Scenario {
        name: "sub".into(),
        failed: BTreeSet::from([0]),
        probability: 1.0,
    };
    let a = Allocation::empty(4, 2);
    let model = build_stage2(dn, &a, &sub_only, &fixture_config()).unwrap();
    let sol = solve_milp(&model.instance, None, &fixture_config().milp_options());
    let shed_all: f64 = dn.load_nodes().map(|i| dn.nodes[i].cost_shed).sum();
    assert_eq!(shed_all, 2550.0);
    assert!(rel_close(sol.objective, 4.0 * shed_all, 1e-9), "{}", sol.objective);
}

#[test]
fn instance_size_is_linear_in_periods_times_elements() {
    // Path networks of growing length with every line failed.
    let mut ratios = Vec::new();
    for n in 3..=8 {
        let mut text = String::from("{\"substation\":0,\"nodes\":[");
        let nodes: Vec<String> = (0..n)
            .map(|i| format!("{{\"id\":{i},\"pc_max\":0.1,\"cost_shed\":100}}"))
            .collect();
        text += &nodes.join(",");
        text += "],\"edges\":[";
        let edges: Vec<String> = (1..n)
            .map(|i| format!("{{\"from\":{},\"to\":{i},\"r\":0.01,\"x\":0.01}}", i - 1))
            .collect();
        text += &edges.join(",");
        text += "],\"ders\":[{\"name\":\"g\",\"pg_max\":0.5}],\"candidate_sites\":[1,2]}";
        let input = parse_network(&text, "path").unwrap();
        let dn = &input.network;
        let s = Scenario {
            name: "all".into(),
            failed: (0..dn.edges.len()).collect(),
            probability: 1.0,
        };
        let a = Allocation::empty(2, 1);
        let model = build_stage2(dn, &a, &s, &SolveConfig::default()).unwrap();
        let kk = horizon(dn) as f64;
        let scale = (kk + 1.0) * (dn.nodes.len() + dn.edges.len() + 2) as f64;
        ratios.push(model.instance.vars.len() as f64 / scale);
    }
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().cloned().fold(0.0, f64::max);
    assert!(hi / lo < 1.5, "{ratios:?}");
}

fn period_value(input: &NetworkInput, a: &str, s: &str, prev: &[bool], k: usize) -> f64 {
    let cfg = fixture_config();
    let model = build_period_mip(&input.network, &named(input, a), scenario(input, s), prev, k, &cfg).unwrap();
    let sol = solve_milp(&model.instance, None, &cfg.milp_options());
    assert_eq!(sol.status, MilpStatus::Optimal);
    sol.objective
}

#[test]
fn single_period_solves() {
    let input = fixture();
    let all_down = vec![true; 4];
    assert!(rel_close(period_value(&input, "A1", "S3", &all_down, 0), 1900.0, 1e-9));
    let cfg = fixture_config();
    let model = build_period_mip(
        &input.network,
        &named(&input, "A1"),
        scenario(&input, "S3"),
        &all_down,
        1,
        &cfg,
    )
    .unwrap();
    let sol = solve_milp(&model.instance, None, &cfg.milp_options());
    assert!(rel_close(sol.objective, 1000.0, 1e-9), "{}", sol.objective);
    let plan = extract_plan(&input.network, &model, &sol, 1e-6).unwrap();
    // One repair per period; the line to node 3 feeds the remaining load.
    assert_eq!(plan.periods[0].repairs, BTreeSet::from([2]));
    let none_down = vec![false; 4];
    assert!(period_value(&input, "A1", "S3", &none_down, 4).abs() < 1e-9);
}

/// Brute force over repair orders with crew 1: each schedule is a
/// sequence of distinct failed lines, one per period, with period costs
/// from the dispatch problem of the resulting state.
fn best_schedules(input: &NetworkInput, a: &Allocation, s: &Scenario) -> (f64, Vec<Vec<BTreeSet<usize>>>) {
    let dn = &input.network;
    let cfg = fixture_config();
    let kk = horizon(dn);
    let repairable: Vec<usize> = s
        .failed
        .iter()
        .copied()
        .filter(|&e| !dn.is_substation_edge(e))
        .collect();
    let cost = |down: &[bool], k: usize| {
        let m = build_dispatch_mip(dn, a, down, k, k == kk, &cfg);
        solve_milp(&m.instance, None, &cfg.milp_options()).objective
    };
    let mut best = f64::INFINITY;
    let mut argbest = Vec::new();
    // Each period 1..K-1 picks nothing or one still-failed line.
    let choices = repairable.len() + 1;
    let total = choices.pow((kk - 1) as u32);
    for code in 0..total {
        let mut c = code;
        let mut down: Vec<bool> = (0..dn.edges.len()).map(|e| s.is_failed(e)).collect();
        let mut value = cost(&down, 0);
        let mut sched = vec![BTreeSet::new()];
        let mut ok = true;
        for k in 1..kk {
            let pick = c % choices;
            c /= choices;
            let mut rep = BTreeSet::new();
            if pick > 0 {
                let e = repairable[pick - 1];
                if !down[e] {
                    ok = false;
                    break;
                }
                down[e] = false;
                rep.insert(e);
            }
            value += cost(&down, k);
            sched.push(rep);
        }
        if !ok {
            continue;
        }
        let finals: BTreeSet<usize> = (0..dn.edges.len()).filter(|&e| down[e]).collect();
        sched.push(finals);
        if value < best - 1e-6 {
            best = value;
            argbest = vec![sched];
        } else if (value - best).abs() <= 1e-6 {
            argbest.push(sched);
        }
    }
    (best, argbest)
}

#[test]
fn repair_schedule_matches_brute_force() {
    let input = fixture();
    let a = named(&input, "A1");
    let s = scenario(&input, "S1");
    let (best, schedules) = best_schedules(&input, &a, s);
    assert!(rel_close(best, 2350.0, 1e-9));
    let sol = solve_stage2(&input.network, &a, s, &fixture_config(), Stage2Engine::default()).unwrap();
    let got: Vec<BTreeSet<usize>> = sol.plan.periods.iter().map(|p| p.repairs.clone()).collect();
    assert!(schedules.contains(&got), "{got:?} not among {schedules:?}");
    // Line 1-2 (edge 1) comes back first in every optimal order.
    assert!(schedules.iter().all(|sc| sc[1] == BTreeSet::from([1])));
}

#[test]
fn substation_only_failure_has_nothing_to_schedule() {
    let input = fixture();
    let s = Scenario {
        name: "sub".into(),
        failed: BTreeSet::from([0]),
        probability: 1.0,
    };
    let a = named(&input, "A1");
    let cfg = fixture_config();
    let sol = solve_stage2(&input.network, &a, &s, &cfg, Stage2Engine::default()).unwrap();
    for p in &sol.plan.periods[1..4] {
        assert!(p.repairs.is_empty());
    }
    let g = greedy_stage2(&input.network, &a, &s, &cfg).unwrap();
    for k in 1..4 {
        assert!(rel_close(g.period_values[k], g.period_values[0], 1e-9));
    }
    assert!(g.period_values[4].abs() < 1e-9);
}

#[test]
fn lp_relaxation_bounds_the_milp() {
    let input = fixture();
    let cfg = fixture_config();
    let model = build_stage2(&input.network, &named(&input, "A1"), scenario(&input, "S1"), &cfg).unwrap();
    let lp = solve_lp(&model.instance.relaxed(), &cfg.milp_options().lp);
    assert!(lp.objective <= 2350.0 + 1e-6, "{}", lp.objective);
}

#[test]
fn greedy_bound_reproduces_value_with_fewer_nodes() {
    let input = fixture();
    let cfg = fixture_config();
    let a = named(&input, "A1");
    let s = scenario(&input, "S2");
    let plain = solve_stage2(&input.network, &a, s, &cfg, ENGINES[0]).unwrap();
    assert!(rel_close(plain.value, 2400.0, 1e-9));
    let a3 = named(&input, "A3");
    let s2 = scenario(&input, "S2");
    let plain = solve_stage2(&input.network, &a3, s2, &cfg, ENGINES[0]).unwrap();
    let bounded = solve_stage2(&input.network, &a3, s2, &cfg, ENGINES[1]).unwrap();
    assert!(rel_close(bounded.value, 3400.0, 1e-9));
    assert!(bounded.nodes <= plain.nodes, "{} > {}", bounded.nodes, plain.nodes);
}

#[test]
fn greedy_matches_optimum_on_a1_s1() {
    let input = fixture();
    let g = greedy_stage2(
        &input.network,
        &named(&input, "A1"),
        scenario(&input, "S1"),
        &fixture_config(),
    )
    .unwrap();
    assert!(rel_close(g.total, 2350.0, 1e-9));
    assert!(rel_close(g.plan.total_cost(&input.network), 2350.0, 1e-9));
}

#[test]
fn fixed_discrete_lp_recomposes_the_optimum() {
    let input = fixture();
    let cfg = fixture_config();
    let dn = &input.network;
    let a = named(&input, "A1");
    let s = scenario(&input, "S1");
    let sol = solve_stage2(dn, &a, s, &cfg, Stage2Engine::default()).unwrap();
    let fixed = solve_subproblem_fixed(dn, &a, s, &sol.plan, &cfg).unwrap();
    assert!(rel_close(fixed.objective, 2350.0, 1e-9), "{}", fixed.objective);
    // Continuous share: control-cost credit for each served fraction.
    let credit: f64 = sol
        .plan
        .periods
        .iter()
        .map(|p| {
            dn.load_nodes()
                .map(|i| dn.nodes[i].cost_control * p.dispatch.served[i])
                .sum::<f64>()
        })
        .sum();
    assert!(rel_close(fixed.objective - fixed.discrete_cost, -credit, 1e-6));
    // Strong duality: dual value of the right-hand side equals the LP value.
    assert!(rel_close(fixed.affine.eval(&a), fixed.objective, 1e-6));
}

#[test]
fn forced_shedding_costs_the_shed_total() {
    let input = fixture();
    let dn = &input.network;
    let cfg = fixture_config();
    let model = build_dispatch_mip(dn, &Allocation::empty(4, 2), &[true; 4], 1, false, &cfg);
    let sol = solve_milp(&model.instance, None, &cfg.milp_options());
    assert!(rel_close(sol.objective, dn.total_shed_cost(), 1e-9));
}

#[test]
fn printed_cut_value_at_generating_allocation() {
    let input = fixture();
    let dn = &input.network;
    let cfg = fixture_config();
    let a1 = named(&input, "A1");
    let scenarios = input.scenarios.clone().unwrap();
    let mut terms = Vec::new();
    let mut sum = 0.0;
    for s in &scenarios {
        let sol = solve_stage2(dn, &a1, s, &cfg, Stage2Engine::default()).unwrap();
        sum += sol.value;
        terms.push(solve_subproblem_fixed(dn, &a1, s, &sol.plan, &cfg).unwrap().affine);
    }
    // L* recomputed from the reference period costs.
    let l_star = 200.0 + (2350.0 + 2400.0 + 3800.0);
    assert!(rel_close(dn.site_cost(&a1) + sum, l_star, 1e-9));
    let cut = build_benders_cut(dn, &terms, &[1.0; 3], l_star, cfg.epsilon_cut);
    assert!(rel_close(cut.value(&a1), 8750.0, 1e-9), "{}", cut.value(&a1));
    assert!(cut.excludes(&a1));

    // Linearity in a single coordinate.
    let v = a1.to_vector();
    for j in 0..v.len() {
        let mut w = v.clone();
        w[j] = !w[j];
        let b = Allocation::from_vector(4, 2, &w);
        let sign = if w[j] { 1.0 } else { -1.0 };
        assert!((cut.value(&b) - cut.value(&a1) - sign * cut.coeffs[j]).abs() < 1e-6);
    }
}

#[test]
fn cut_margin_must_be_positive() {
    let cfg = SolveConfig {
        epsilon_cut: 0.0,
        ..SolveConfig::default()
    };
    assert!(cfg.check().is_err());
}

/// Cut `sum_{j in a} x_j - sum_{j not in a} x_j <= |a| - 1`, which removes
/// exactly `a`.
fn no_good(a: &Allocation) -> BendersCut {
    let v = a.to_vector();
    let ones = v.iter().filter(|&&b| b).count() as f64;
    BendersCut {
        coeffs: v.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect(),
        constant: 0.0,
        rhs: ones - 1.0,
    }
}

#[test]
fn master_without_cuts_is_free() {
    let dn = fixture().network;
    let a = solve_master(&dn, 2, &[], None).unwrap().unwrap();
    assert_eq!(dn.site_cost(&a), 0.0);
}

#[test]
fn master_exhausted_by_cuts() {
    let dn = fixture().network;
    let cuts: Vec<BendersCut> = enumerate_allocations(&dn, 2).iter().map(no_good).collect();
    assert_eq!(solve_master(&dn, 2, &cuts, None).unwrap(), None);
}

#[test]
fn master_moves_to_next_cost_level() {
    let dn = fixture().network;
    let all = enumerate_allocations(&dn, 2);
    let free: Vec<&Allocation> = all.iter().filter(|a| dn.site_cost(a) == 0.0).collect();
    let cuts: Vec<BendersCut> = free.iter().map(|a| no_good(a)).collect();
    let expected = all
        .iter()
        .filter(|a| dn.site_cost(a) > 0.0)
        .map(|a| dn.site_cost(a))
        .fold(f64::INFINITY, f64::min);
    let got = solve_master(&dn, 2, &cuts, None).unwrap().unwrap();
    assert_eq!(expected, 100.0);
    assert_eq!(dn.site_cost(&got), expected);
    assert!(!free.contains(&&got));
}

#[test]
fn expected_costs_of_named_allocations() {
    let input = fixture();
    let sc = input.scenarios.clone().unwrap();
    let cfg = fixture_config();
    for (name, want) in [("A1", 3050.0), ("A3", 3233.0 + 1.0 / 3.0), ("A2", 3800.0)] {
        let e = evaluate_allocation(&input.network, &named(&input, name), &sc, &cfg, Stage2Engine::RepairDp).unwrap();
        assert!(rel_close(e.objective, want, 1e-6), "{name}: {}", e.objective);
    }
}

#[test]
fn baselines_on_the_fixture() {
    let input = fixture();
    let dn = &input.network;
    let sc = input.scenarios.clone().unwrap();
    let cfg = fixture_config();
    let listed: Vec<Allocation> = input.allocations.iter().map(|(_, a)| a.clone()).collect();
    let (best, _) = baseline_se(dn, &sc, 2, &cfg, Stage2Engine::RepairDp, Some(&listed)).unwrap();
    assert!(rel_close(best.objective, 3050.0, 1e-6));
    assert_eq!(best.allocation, named(&input, "A1"));

    let (full, all) = baseline_se(dn, &sc, 2, &cfg, Stage2Engine::RepairDp, None).unwrap();
    let bora = baseline_bora(dn, &sc, 2, &cfg, Stage2Engine::RepairDp, all.len(), 7).unwrap();
    assert!(rel_close(bora.objective, full.objective, 1e-9));

    // Hop distances from the substation: node 1 is one hop, the rest two.
    let hops = dn.hop_distances(dn.substation);
    assert_eq!(&hops[1..], &[1, 2, 2, 2]);
    let sa = baseline_sa(dn, &sc, 2, &cfg, Stage2Engine::RepairDp).unwrap();
    let sites: Vec<usize> = (0..4)
        .filter(|&u| sa.allocation.sites[u])
        .map(|u| dn.candidate_sites[u])
        .collect();
    assert!(sites == vec![2, 3] || sites == vec![2, 4], "{sites:?}");
    assert!(sa.objective >= 3050.0 - 1e-6);
}

#[test]
fn load_cost_examples() {
    let dn = fixture().network;
    assert_eq!(load_cost(&dn.nodes[2], true, 0.0), 1000.0);
    assert_eq!(load_cost(&dn.nodes[3], false, 0.5), 150.0);
    assert_eq!(load_value(&dn.nodes[3], false, 0.5), 750.0);
    for i in dn.load_nodes() {
        assert_eq!(load_cost(&dn.nodes[i], false, 1.0), 0.0);
    }
}

#[test]
fn performance_under_constant_cost() {
    let input = fixture();
    let dn = &input.network;
    let e = evaluate_allocation(
        dn,
        &named(&input, "A2"),
        input.scenarios.as_ref().unwrap(),
        &fixture_config(),
        Stage2Engine::RepairDp,
    )
    .unwrap();
    let series = system_performance(dn, &e.period_costs);
    let want = 100.0 * (1.0 - 950.0 / 2550.0);
    for k in 0..4 {
        assert!((series.performance[k] - want).abs() < 1e-6, "{:?}", series.performance);
    }
    assert!((series.performance[4] - 100.0).abs() < 1e-9);
    assert!((want - 62.745_098).abs() < 1e-6);

    let all_shed = vec![vec![dn.total_shed_cost(), 0.0]];
    let s = system_performance(dn, &all_shed);
    assert_eq!(s.performance, vec![0.0, 100.0]);
}
