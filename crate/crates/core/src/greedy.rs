//! Period-by-period greedy repair and dispatch, giving a feasible plan and
//! an upper bound on the Stage II optimum.

use std::collections::HashMap;

use resalloc_milp::{BuiltinSolver, Solver};
use serde::Serialize;

use crate::network::{horizon, Allocation, DistributionNetwork, Scenario};
use crate::stage2::{build_period_mip, extract_plan, PeriodPlan, RestorationPlan, SolveConfig, Stage2Error};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreedyResult {
    pub plan: RestorationPlan,
    pub period_values: Vec<f64>,
    pub total: f64,
    /// Branch-and-bound nodes over all distinct period solves.
    pub nodes: usize,
}

pub fn greedy_stage2(
    dn: &DistributionNetwork,
    a: &Allocation,
    s: &Scenario,
    cfg: &SolveConfig,
) -> Result<GreedyResult, Stage2Error> {
    let solver = BuiltinSolver {
        options: cfg.milp_options(),
    };
    greedy_stage2_with(&solver, dn, a, s, cfg)
}

/// Greedy pass with a caller-supplied engine. Period problems depend only
/// on the incoming state and on whether the period is first, middle, or
/// last, so repeats are served from a cache.
pub fn greedy_stage2_with(
    solver: &dyn Solver,
    dn: &DistributionNetwork,
    a: &Allocation,
    s: &Scenario,
    cfg: &SolveConfig,
) -> Result<GreedyResult, Stage2Error> {
    let kk = horizon(dn);
    let ne = dn.edges.len();
    let mut prev: Vec<bool> = (0..ne).map(|e| s.is_failed(e)).collect();
    let mut cache: HashMap<(Vec<bool>, u8), (PeriodPlan, f64)> = HashMap::new();
    let mut periods = Vec::with_capacity(kk + 1);
    let mut values = Vec::with_capacity(kk + 1);
    let mut nodes = 0;
    for k in 0..=kk {
        let kind = if k == 0 {
            0
        } else if k == kk {
            2
        } else {
            1
        };
        let key = (prev.clone(), kind);
        let (mut pp, value) = match cache.get(&key) {
            Some(hit) => hit.clone(),
            None => {
                let model = build_period_mip(dn, a, s, &prev, k, cfg)?;
                let sol = solver.solve_milp(&model.instance, None);
                nodes += sol.nodes;
                let plan = extract_plan(dn, &model, &sol, 1e-6)?;
                let pp = plan.periods.into_iter().next().expect("one period");
                cache.insert(key, (pp.clone(), sol.objective));
                (pp, sol.objective)
            }
        };
        pp.k = k;
        prev.clone_from(&pp.down);
        periods.push(pp);
        values.push(value);
    }
    let total = values.iter().sum();
    Ok(GreedyResult {
        plan: RestorationPlan { periods },
        period_values: values,
        total,
        nodes,
    })
}
