//! Sample-average Benders loop over allocations, exact Stage II solvers,
//! cut construction, and the comparison baselines.

use std::collections::HashMap;
use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use resalloc_milp::{solve_lp, solve_milp, LpSolution, LpStatus, MilpInstance, MilpStatus, Row, RowSense, VarKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::greedy::{greedy_stage2, GreedyResult};
use crate::network::{enumerate_allocations, horizon, Allocation, DistributionNetwork, Scenario};
use crate::stage2::{
    build_dispatch_mip, build_relaxed_period, build_stage2, extract_plan, PeriodPlan, RestorationPlan, SolveConfig,
    Stage2Error, Stage2Model,
};

#[derive(Debug, Error)]
pub enum LbdError {
    #[error("allocation {allocation}, scenario {scenario}: {source}")]
    Subproblem {
        allocation: String,
        scenario: String,
        #[source]
        source: Stage2Error,
    },
    #[error("{0}")]
    Stage2(#[from] Stage2Error),
    #[error("no scenarios given")]
    NoScenarios,
    #[error("scenario weights must be nonnegative with a positive sum")]
    BadWeights,
    #[error("budget {budget} exceeds the {available} available DERs")]
    Budget { budget: usize, available: usize },
    #[error("master problem: {0}")]
    Master(String),
    #[error("fixed-discrete LP for scenario {scenario} period {period} ended with {status:?}")]
    FixedLp {
        scenario: String,
        period: usize,
        status: LpStatus,
    },
}

/// Exact method for the Stage II problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stage2Engine {
    /// Branch-and-bound on the full multi-period instance, optionally with
    /// the greedy value installed as an objective cut.
    BranchAndBound { greedy_bound: bool },
    /// Dynamic program over sets of repaired lines; each distinct set is
    /// priced by one dispatch MILP.
    RepairDp,
}

impl Default for Stage2Engine {
    fn default() -> Self {
        Stage2Engine::BranchAndBound { greedy_bound: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stage2Solution {
    pub value: f64,
    pub period_costs: Vec<f64>,
    pub plan: RestorationPlan,
    pub greedy: Option<GreedyResult>,
    pub nodes: usize,
}

pub fn solve_stage2(
    dn: &DistributionNetwork,
    a: &Allocation,
    s: &Scenario,
    cfg: &SolveConfig,
    engine: Stage2Engine,
) -> Result<Stage2Solution, Stage2Error> {
    match engine {
        Stage2Engine::BranchAndBound { greedy_bound } => {
            let greedy = if greedy_bound {
                Some(greedy_stage2(dn, a, s, cfg)?)
            } else {
                None
            };
            let model = build_stage2(dn, a, s, cfg)?;
            let sol = solve_milp(&model.instance, greedy.as_ref().map(|g| g.total), &cfg.milp_options());
            let plan = extract_plan(dn, &model, &sol, 1e-6)?;
            Ok(Stage2Solution {
                value: sol.objective,
                period_costs: plan.period_costs(dn),
                plan,
                greedy,
                nodes: sol.nodes,
            })
        }
        Stage2Engine::RepairDp => {
            let (plan, value, nodes) = solve_stage2_dp(dn, a, s, cfg)?;
            Ok(Stage2Solution {
                value,
                period_costs: plan.period_costs(dn),
                plan,
                greedy: None,
                nodes,
            })
        }
    }
}

/// Exact Stage II value by dynamic programming over repaired-line sets.
///
/// Dispatch in a period depends only on which lines are operational, so
/// the multi-period problem reduces to choosing a path of growing repair
/// sets, each step adding at most `crew_capacity` lines.
pub fn solve_stage2_dp(
    dn: &DistributionNetwork,
    a: &Allocation,
    s: &Scenario,
    cfg: &SolveConfig,
) -> Result<(RestorationPlan, f64, usize), Stage2Error> {
    cfg.check()?;
    let kk = horizon(dn);
    let ne = dn.edges.len();
    let repairable: Vec<usize> = s
        .failed
        .iter()
        .copied()
        .filter(|&e| !dn.is_substation_edge(e))
        .collect();
    let m = repairable.len();
    if m > 20 {
        return Err(Stage2Error::Config(format!(
            "{m} repairable failures is too many for the repair-set DP"
        )));
    }
    let full: u32 = if m == 0 { 0 } else { (1u32 << m) - 1 };
    let opts = cfg.milp_options();
    let mut nodes = 0usize;
    let mut priced: HashMap<(u32, bool), (PeriodPlan, f64)> = HashMap::new();
    let mut price = |mask: u32, is_final: bool, nodes: &mut usize| -> Result<(PeriodPlan, f64), Stage2Error> {
        if let Some(hit) = priced.get(&(mask, is_final)) {
            return Ok(hit.clone());
        }
        let mut down = vec![false; ne];
        if !is_final {
            for &e in &s.failed {
                down[e] = true;
            }
            for (b, &e) in repairable.iter().enumerate() {
                if mask >> b & 1 == 1 {
                    down[e] = false;
                }
            }
        }
        let model = build_dispatch_mip(dn, a, &down, 0, is_final, cfg);
        let sol = solve_milp(&model.instance, None, &opts);
        *nodes += sol.nodes;
        let plan = extract_plan(dn, &model, &sol, 1e-6)?;
        let pp = plan.periods.into_iter().next().expect("one period");
        priced.insert((mask, is_final), (pp.clone(), sol.objective));
        Ok((pp, sol.objective))
    };

    let at = |k: usize, e: Stage2Error| Stage2Error::Period { k, source: Box::new(e) };
    let y = cfg.crew_capacity;
    let (_, final_cost) = price(full, true, &mut nodes).map_err(|e| at(kk, e))?;
    // value[mask] at period k+1 and the chosen step for each (k, mask).
    let mut next: Vec<f64> = vec![final_cost; 1 << m];
    let mut choice: Vec<Vec<u32>> = vec![Vec::new(); kk + 1];
    for k in (1..kk).rev() {
        let mut cur = vec![f64::INFINITY; 1 << m];
        let mut pick = vec![0u32; 1 << m];
        for mask in 0..=full {
            let free = full & !mask;
            let mut sub = free;
            loop {
                if (sub.count_ones() as usize) <= y {
                    let target = mask | sub;
                    let (_, c) = price(target, false, &mut nodes).map_err(|e| at(k, e))?;
                    let v = c + next[target as usize];
                    if v < cur[mask as usize] - 1e-9 * (1.0 + v.abs())
                        || (v <= cur[mask as usize] + 1e-9 * (1.0 + v.abs())
                            && sub.count_ones() > pick[mask as usize].count_ones())
                    {
                        cur[mask as usize] = v;
                        pick[mask as usize] = sub;
                    }
                }
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & free;
            }
        }
        choice[k] = pick;
        next = cur;
    }
    let (p0, c0) = price(0, false, &mut nodes).map_err(|e| at(0, e))?;
    let value = c0 + next[0];

    let mut periods = Vec::with_capacity(kk + 1);
    let mut p0 = p0;
    p0.k = 0;
    periods.push(p0);
    let mut mask = 0u32;
    for k in 1..kk {
        let step = choice[k][mask as usize];
        mask |= step;
        let (mut pp, _) = price(mask, false, &mut nodes).map_err(|e| at(k, e))?;
        pp.k = k;
        pp.repairs = repairable
            .iter()
            .enumerate()
            .filter(|(b, _)| step >> b & 1 == 1)
            .map(|(_, &e)| e)
            .collect();
        periods.push(pp);
    }
    let (mut pk, _) = price(full, true, &mut nodes).map_err(|e| at(kk, e))?;
    pk.k = kk;
    pk.repairs = s
        .failed
        .iter()
        .copied()
        .filter(|&e| match repairable.iter().position(|&r| r == e) {
            Some(b) => mask >> b & 1 == 0,
            None => true,
        })
        .collect();
    periods.push(pk);
    Ok((RestorationPlan { periods }, value, nodes))
}

/// Affine function `constant + coeffs . a` of the flat allocation vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Affine {
    pub constant: f64,
    pub coeffs: Vec<f64>,
}

impl Affine {
    pub fn zero(len: usize) -> Self {
        Affine {
            constant: 0.0,
            coeffs: vec![0.0; len],
        }
    }

    pub fn eval(&self, a: &Allocation) -> f64 {
        self.constant
            + a.to_vector()
                .iter()
                .zip(&self.coeffs)
                .filter(|(b, _)| **b)
                .map(|(_, c)| c)
                .sum::<f64>()
    }

    pub fn add_scaled(&mut self, other: &Affine, w: f64) {
        self.constant += w * other.constant;
        for (c, o) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *c += w * o;
        }
    }
}

/// Dual-based affine minorant of a block's LP value as a function of the
/// allocation. Exact at the allocation the LP was solved for; a lower
/// bound everywhere else because the dual point stays feasible when only
/// right-hand sides move.
pub fn lp_value_affine(model: &Stage2Model, inst: &MilpInstance, lp: &LpSolution, len: usize) -> Affine {
    let mut aff = Affine::zero(len);
    aff.constant = inst.obj_offset;
    for (i, &y) in lp.duals.iter().enumerate() {
        if y == 0.0 {
            continue;
        }
        aff.constant += y * model.base_rhs[i];
        for &(j, t) in &model.alloc_terms[i] {
            aff.coeffs[j] += y * t;
        }
    }
    for (j, v) in inst.vars.iter().enumerate() {
        let d = lp.reduced_costs[j];
        let bound = if d > 0.0 {
            v.lower
        } else if d < 0.0 {
            v.upper
        } else {
            continue;
        };
        aff.constant += d * if bound.is_finite() { bound } else { lp.x[j] };
    }
    aff
}

/// Continuous LP of one scenario with all discrete decisions fixed to a
/// plan, solved period by period (rows linking periods involve discrete
/// variables only and become constants).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedLp {
    /// Objective share of the discrete variables, including constant terms.
    pub discrete_cost: f64,
    pub objective: f64,
    pub period_objectives: Vec<f64>,
    /// Row duals per period block.
    pub duals: Vec<Vec<f64>>,
    /// Discrete cost plus the dual value of the right-hand side, as an
    /// affine function of the allocation.
    pub affine: Affine,
}

pub fn solve_subproblem_fixed(
    dn: &DistributionNetwork,
    a: &Allocation,
    s: &Scenario,
    plan: &RestorationPlan,
    cfg: &SolveConfig,
) -> Result<FixedLp, LbdError> {
    let kk = horizon(dn);
    let len = a.to_vector().len();
    let mut memo: HashMap<(Vec<bool>, Vec<bool>, bool), (f64, f64, Vec<f64>, Affine)> = HashMap::new();
    let mut out = FixedLp {
        discrete_cost: 0.0,
        objective: 0.0,
        period_objectives: Vec::new(),
        duals: Vec::new(),
        affine: Affine::zero(len),
    };
    for pp in &plan.periods {
        let is_final = pp.k == kk;
        let key = (pp.down.clone(), pp.dispatch.shed.clone(), is_final);
        if !memo.contains_key(&key) {
            let model = build_dispatch_mip(dn, a, &pp.down, pp.k, is_final, cfg);
            let pv = &model.periods[0];
            let mut fixes = Vec::new();
            let mut discrete = model.instance.obj_offset;
            for i in dn.load_nodes() {
                let j = pv.shed[i].expect("load node");
                let v = if pp.dispatch.shed[i] { 1.0 } else { 0.0 };
                fixes.push((j, v));
                discrete += model.instance.vars[j].obj * v;
            }
            for &j in pv.line_down.iter().flatten() {
                discrete += model.instance.vars[j].obj * model.instance.vars[j].lower;
            }
            let inst = model.instance.with_fixed(&fixes).relaxed();
            let lp = solve_lp(&inst, &cfg.milp_options().lp);
            if lp.status != LpStatus::Optimal {
                return Err(LbdError::FixedLp {
                    scenario: s.name.clone(),
                    period: pp.k,
                    status: lp.status,
                });
            }
            let aff = lp_value_affine(&model, &inst, &lp, len);
            memo.insert(key.clone(), (discrete, lp.objective, lp.duals.clone(), aff));
        }
        let (discrete, obj, duals, aff) = &memo[&key];
        out.discrete_cost += discrete;
        out.objective += obj;
        out.period_objectives.push(*obj);
        out.duals.push(duals.clone());
        out.affine.add_scaled(aff, 1.0);
    }
    Ok(out)
}

/// Affine lower bound on `J_II(., s)` from per-period LP relaxations:
/// one for the first period, one shared by all middle periods, and one for
/// the final period.
pub fn lp_lower_bound(dn: &DistributionNetwork, a: &Allocation, s: &Scenario, cfg: &SolveConfig) -> Affine {
    let kk = horizon(dn);
    let len = a.to_vector().len();
    let mut total = Affine::zero(len);
    let mut blocks = vec![(0usize, 1.0)];
    if kk >= 2 {
        blocks.push((1, (kk - 1) as f64));
    }
    blocks.push((kk, 1.0));
    for (k, mult) in blocks {
        let model = build_relaxed_period(dn, a, s, k, cfg);
        let lp = solve_lp(&model.instance, &cfg.milp_options().lp);
        if lp.status == LpStatus::Optimal {
            let aff = lp_value_affine(&model, &model.instance, &lp, len);
            total.add_scaled(&aff, mult);
        }
        // A failed relaxation contributes zero, which is still valid since
        // period costs are nonnegative.
    }
    total
}

/// Linear cut `constant + coeffs . a <= rhs` over allocations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BendersCut {
    pub coeffs: Vec<f64>,
    pub constant: f64,
    pub rhs: f64,
}

impl BendersCut {
    pub fn value(&self, a: &Allocation) -> f64 {
        self.constant
            + a.to_vector()
                .iter()
                .zip(&self.coeffs)
                .filter(|(b, _)| **b)
                .map(|(_, c)| c)
                .sum::<f64>()
    }

    pub fn excludes(&self, a: &Allocation) -> bool {
        self.value(a) > self.rhs
    }
}

/// Site-cost function as an affine map of the allocation vector.
pub fn first_stage_affine(dn: &DistributionNetwork) -> Affine {
    let nu = dn.candidate_sites.len();
    let len = Allocation::vector_len(nu, dn.ders.len());
    let mut aff = Affine::zero(len);
    for (u, &node) in dn.candidate_sites.iter().enumerate() {
        aff.coeffs[Allocation::site_var(u)] = dn.nodes[node].site_weight;
    }
    aff
}

/// Assembles `J_I(a) + sum_s w_s term_s(a) <= L* - eps`.
pub fn build_benders_cut(
    dn: &DistributionNetwork,
    terms: &[Affine],
    weights: &[f64],
    l_star: f64,
    eps: f64,
) -> BendersCut {
    let mut aff = first_stage_affine(dn);
    for (t, &w) in terms.iter().zip(weights) {
        aff.add_scaled(t, w);
    }
    BendersCut {
        coeffs: aff.coeffs,
        constant: aff.constant,
        rhs: l_star - eps,
    }
}

/// Per-scenario cut term that equals `j_star` at `a_star` and never
/// exceeds the true Stage II value elsewhere: the LP lower bound, plus its
/// gap at `a_star` multiplied by `1 - hamming(a, a_star)`.
pub fn sound_cut_term(bound: &Affine, a_star: &Allocation, j_star: f64) -> Affine {
    let v = a_star.to_vector();
    let gap = (j_star - bound.eval(a_star)).max(0.0);
    let ones = v.iter().filter(|&&b| b).count() as f64;
    let mut hamming = Affine {
        constant: 1.0 - ones,
        coeffs: v.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect(),
    };
    hamming.constant *= gap;
    for c in &mut hamming.coeffs {
        *c *= gap;
    }
    let mut out = bound.clone();
    out.add_scaled(&hamming, 1.0);
    out
}

/// Stage I instance over the flat allocation vector, with cut rows.
pub fn master_instance(dn: &DistributionNetwork, budget: usize, cuts: &[BendersCut]) -> MilpInstance {
    let nu = dn.candidate_sites.len();
    let nd = dn.ders.len();
    let mut m = MilpInstance::new();
    for (u, &node) in dn.candidate_sites.iter().enumerate() {
        m.add_var(
            format!("site_{node}"),
            0.0,
            1.0,
            dn.nodes[node].site_weight,
            VarKind::Binary,
        );
        debug_assert_eq!(m.num_vars() - 1, Allocation::site_var(u));
    }
    for &node in &dn.candidate_sites {
        for d in 0..nd {
            m.add_var(format!("assign_{node}_{d}"), 0.0, 1.0, 0.0, VarKind::Binary);
        }
    }
    let g = |u: usize, d: usize| Allocation::assign_var(nu, nd, u, d);
    for u in 0..nu {
        let mut coeffs = vec![(u, 1.0)];
        coeffs.extend((0..nd).map(|d| (g(u, d), -1.0)));
        m.add_row(Row::new(format!("open_{u}"), coeffs, RowSense::Le, 0.0));
        for d in 0..nd {
            m.add_row(Row::new(
                format!("link_{u}_{d}"),
                vec![(g(u, d), 1.0), (u, -1.0)],
                RowSense::Le,
                0.0,
            ));
        }
    }
    for d in 0..nd {
        let coeffs = (0..nu).map(|u| (g(u, d), 1.0)).collect();
        m.add_row(Row::new(format!("once_{d}"), coeffs, RowSense::Le, 1.0));
    }
    let all = (0..nu)
        .flat_map(|u| (0..nd).map(move |d| (u, d)))
        .map(|(u, d)| (g(u, d), 1.0))
        .collect();
    m.add_row(Row::new("budget", all, RowSense::Le, budget as f64));
    for (c, cut) in cuts.iter().enumerate() {
        let coeffs = cut
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(j, &v)| (j, v))
            .collect();
        m.add_row(Row::new(
            format!("cut_{c}"),
            coeffs,
            RowSense::Le,
            cut.rhs - cut.constant,
        ));
    }
    m
}

/// Cheapest allocation satisfying every cut, or `None` once cuts exclude
/// all of them. With `allowed`, the search is restricted to that list and
/// ties go to the earliest entry.
pub fn solve_master(
    dn: &DistributionNetwork,
    budget: usize,
    cuts: &[BendersCut],
    allowed: Option<&[Allocation]>,
) -> Result<Option<Allocation>, LbdError> {
    if let Some(list) = allowed {
        let mut best: Option<(&Allocation, f64)> = None;
        for a in list {
            if !a.is_feasible(budget) || cuts.iter().any(|c| c.excludes(a)) {
                continue;
            }
            let cost = dn.site_cost(a);
            if best.map_or(true, |(_, b)| cost < b) {
                best = Some((a, cost));
            }
        }
        return Ok(best.map(|(a, _)| a.clone()));
    }
    let inst = master_instance(dn, budget, cuts);
    let sol = solve_milp(&inst, None, &resalloc_milp::MilpOptions::default());
    match sol.status {
        MilpStatus::Optimal => {
            let bits: Vec<bool> = sol.x.iter().map(|&v| v > 0.5).collect();
            let a = Allocation::from_vector(dn.candidate_sites.len(), dn.ders.len(), &bits);
            if !a.is_feasible(budget) {
                return Err(LbdError::Master(
                    "returned an allocation breaking the site rules".into(),
                ));
            }
            // Steep cut rows can absorb tolerance-level slack in the LP; an
            // answer that fails the exact check is replaced by enumeration.
            if cuts.iter().any(|c| c.excludes(&a)) {
                let all = enumerate_allocations(dn, budget);
                return solve_master(dn, budget, cuts, Some(&all));
            }
            Ok(Some(a))
        }
        MilpStatus::Infeasible => Ok(None),
        other => Err(LbdError::Master(format!(
            "ended with {other:?} after {} nodes and {} LP iterations",
            sol.nodes, sol.lp_iterations
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CutKind {
    /// Duals of the fixed-discrete LP, as in the classic construction.
    /// May cut off allocations better than the incumbent.
    Printed,
    /// LP lower bound lifted by a Hamming term; never excludes a better
    /// allocation.
    Sound,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LbdOptions {
    pub engine: Stage2Engine,
    pub cut: CutKind,
    /// Sum scenario terms in the cut without probability weights.
    pub unweighted_cut: bool,
    /// Run the greedy pass even when the engine does not need it, for the
    /// trace.
    pub always_greedy: bool,
    pub max_iterations: Option<usize>,
}

impl Default for LbdOptions {
    fn default() -> Self {
        LbdOptions {
            engine: Stage2Engine::default(),
            cut: CutKind::Sound,
            unweighted_cut: false,
            always_greedy: false,
            max_iterations: None,
        }
    }
}

/// One line of the iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub allocation: String,
    pub vector: Vec<u8>,
    pub first_stage: f64,
    pub second_stage: Vec<f64>,
    pub greedy: Vec<Option<f64>>,
    pub objective: f64,
    pub cut_rhs: f64,
    pub cut_value: f64,
    pub incumbent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub allocation: Allocation,
    pub first_stage: f64,
    pub second_stage: Vec<f64>,
    pub period_costs: Vec<Vec<f64>>,
    pub greedy: Vec<Option<f64>>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LbdResult {
    pub best: Allocation,
    pub objective: f64,
    pub trace: Vec<TraceRecord>,
    pub cuts: Vec<BendersCut>,
    pub visited: Vec<Evaluation>,
}

impl LbdResult {
    pub fn best_evaluation(&self) -> &Evaluation {
        self.visited
            .iter()
            .find(|e| e.allocation == self.best)
            .expect("best allocation was visited")
    }
}

pub fn normalized_weights(scenarios: &[Scenario]) -> Result<Vec<f64>, LbdError> {
    if scenarios.is_empty() {
        return Err(LbdError::NoScenarios);
    }
    let sum: f64 = scenarios.iter().map(|s| s.probability).sum();
    if !(sum > 0.0) || scenarios.iter().any(|s| !(s.probability >= 0.0)) {
        return Err(LbdError::BadWeights);
    }
    Ok(scenarios.iter().map(|s| s.probability / sum).collect())
}

fn check_budget(dn: &DistributionNetwork, budget: usize) -> Result<(), LbdError> {
    if budget > dn.ders.len() {
        return Err(LbdError::Budget {
            budget,
            available: dn.ders.len(),
        });
    }
    Ok(())
}

/// Solves every scenario for one allocation and combines the weighted
/// objective.
pub fn evaluate_allocation(
    dn: &DistributionNetwork,
    a: &Allocation,
    scenarios: &[Scenario],
    cfg: &SolveConfig,
    engine: Stage2Engine,
) -> Result<Evaluation, LbdError> {
    Ok(evaluate_full(dn, a, scenarios, cfg, engine, false)?.0)
}

fn evaluate_full(
    dn: &DistributionNetwork,
    a: &Allocation,
    scenarios: &[Scenario],
    cfg: &SolveConfig,
    engine: Stage2Engine,
    always_greedy: bool,
) -> Result<(Evaluation, Vec<Stage2Solution>), LbdError> {
    let weights = normalized_weights(scenarios)?;
    let mut sols = Vec::with_capacity(scenarios.len());
    for s in scenarios {
        let wrap = |source| LbdError::Subproblem {
            allocation: a.describe(dn),
            scenario: s.name.clone(),
            source,
        };
        let mut sol = solve_stage2(dn, a, s, cfg, engine).map_err(wrap)?;
        if always_greedy && sol.greedy.is_none() {
            sol.greedy = Some(greedy_stage2(dn, a, s, cfg).map_err(wrap)?);
        }
        sols.push(sol);
    }
    let first_stage = dn.site_cost(a);
    let second_stage: Vec<f64> = sols.iter().map(|s| s.value).collect();
    let objective = first_stage + second_stage.iter().zip(&weights).map(|(v, w)| v * w).sum::<f64>();
    Ok((
        Evaluation {
            allocation: a.clone(),
            first_stage,
            second_stage,
            period_costs: sols.iter().map(|s| s.period_costs.clone()).collect(),
            greedy: sols.iter().map(|s| s.greedy.as_ref().map(|g| g.total)).collect(),
            objective,
        },
        sols,
    ))
}

/// Benders loop: master over site cost, exact subproblems, one cut per
/// visited allocation, stop when the master is empty.
pub fn run_lbd(
    dn: &DistributionNetwork,
    scenarios: &[Scenario],
    budget: usize,
    cfg: &SolveConfig,
    opts: &LbdOptions,
    allowed: Option<&[Allocation]>,
) -> Result<LbdResult, LbdError> {
    cfg.check()?;
    check_budget(dn, budget)?;
    let weights = normalized_weights(scenarios)?;
    let cut_weights: Vec<f64> = if opts.unweighted_cut {
        vec![1.0; scenarios.len()]
    } else {
        weights.clone()
    };
    let mut cuts: Vec<BendersCut> = Vec::new();
    let mut trace = Vec::new();
    let mut visited: Vec<Evaluation> = Vec::new();
    let mut incumbent = f64::INFINITY;
    let mut best: Option<Allocation> = None;
    let mut r = 0usize;
    while let Some(a) = solve_master(dn, budget, &cuts, allowed)? {
        r += 1;
        if opts.max_iterations.is_some_and(|m| r > m) {
            return Err(LbdError::Master(format!("no termination after {} iterations", r - 1)));
        }
        if visited.iter().any(|e| e.allocation == a) {
            return Err(LbdError::Master(format!("revisited {}", a.describe(dn))));
        }
        let (eval, sols) = evaluate_full(dn, &a, scenarios, cfg, opts.engine, opts.always_greedy)?;
        if eval.objective < incumbent {
            incumbent = eval.objective;
            best = Some(a.clone());
        }
        let mut terms = Vec::with_capacity(scenarios.len());
        for (s, sol) in scenarios.iter().zip(&sols) {
            let term = match opts.cut {
                CutKind::Printed => solve_subproblem_fixed(dn, &a, s, &sol.plan, cfg)?.affine,
                CutKind::Sound => sound_cut_term(&lp_lower_bound(dn, &a, s, cfg), &a, sol.value),
            };
            terms.push(term);
        }
        let l_star = eval.first_stage
            + eval
                .second_stage
                .iter()
                .zip(&cut_weights)
                .map(|(v, w)| v * w)
                .sum::<f64>();
        let cut = build_benders_cut(
            dn,
            &terms,
            &cut_weights,
            l_star,
            cfg.epsilon_cut * l_star.abs().max(1.0),
        );
        trace.push(TraceRecord {
            iteration: r,
            allocation: a.describe(dn),
            vector: a.to_vector().iter().map(|&b| b as u8).collect(),
            first_stage: eval.first_stage,
            second_stage: eval.second_stage.clone(),
            greedy: eval.greedy.clone(),
            objective: eval.objective,
            cut_rhs: cut.rhs,
            cut_value: cut.value(&a),
            incumbent,
        });
        cuts.push(cut);
        visited.push(eval);
    }
    let best = best.ok_or_else(|| LbdError::Master("no feasible allocation".into()))?;
    Ok(LbdResult {
        best,
        objective: incumbent,
        trace,
        cuts,
        visited,
    })
}

pub fn write_trace_jsonl<W: Write>(records: &[TraceRecord], mut w: W) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn best_of(evals: Vec<Evaluation>) -> Option<Evaluation> {
    let mut best: Option<Evaluation> = None;
    for e in evals {
        if best.as_ref().map_or(true, |b| e.objective < b.objective) {
            best = Some(e);
        }
    }
    best
}

/// Simple enumeration: every allocation evaluated exactly.
pub fn baseline_se(
    dn: &DistributionNetwork,
    scenarios: &[Scenario],
    budget: usize,
    cfg: &SolveConfig,
    engine: Stage2Engine,
    allowed: Option<&[Allocation]>,
) -> Result<(Evaluation, Vec<Evaluation>), LbdError> {
    check_budget(dn, budget)?;
    let all = match allowed {
        Some(list) => list.to_vec(),
        None => enumerate_allocations(dn, budget),
    };
    let mut evals = Vec::with_capacity(all.len());
    for a in &all {
        evals.push(evaluate_allocation(dn, a, scenarios, cfg, engine)?);
    }
    let best = best_of(evals.clone()).ok_or_else(|| LbdError::Master("no allocations".into()))?;
    Ok((best, evals))
}

/// Best of `samples` allocations drawn uniformly without replacement.
pub fn baseline_bora(
    dn: &DistributionNetwork,
    scenarios: &[Scenario],
    budget: usize,
    cfg: &SolveConfig,
    engine: Stage2Engine,
    samples: usize,
    seed: u64,
) -> Result<Evaluation, LbdError> {
    check_budget(dn, budget)?;
    let all = enumerate_allocations(dn, budget);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<&Allocation> = all.choose_multiple(&mut rng, samples.min(all.len()).max(1)).collect();
    let mut evals = Vec::with_capacity(picked.len());
    for a in picked {
        evals.push(evaluate_allocation(dn, a, scenarios, cfg, engine)?);
    }
    best_of(evals).ok_or_else(|| LbdError::Master("no allocations".into()))
}

/// Spatially even placement: DERs in decreasing capacity order, each at
/// the site farthest (in hops) from the substation and sites already used.
pub fn spread_allocation(dn: &DistributionNetwork, budget: usize) -> Allocation {
    let nu = dn.candidate_sites.len();
    let nd = dn.ders.len();
    let mut order: Vec<usize> = (0..nd).collect();
    order.sort_by(|&x, &y| dn.ders[y].pg_max.total_cmp(&dn.ders[x].pg_max));
    let mut anchors = vec![dn.substation];
    let mut pairs = Vec::new();
    for &d in order.iter().take(budget.min(nd)) {
        let mut best: Option<(usize, usize, usize)> = None;
        for (u, &node) in dn.candidate_sites.iter().enumerate() {
            let dist = dn.hop_distances(node);
            let score = anchors.iter().map(|&x| dist[x]).min().unwrap_or(usize::MAX);
            let better = match best {
                None => true,
                Some((_, bs, bn)) => score > bs || (score == bs && node < bn),
            };
            if better {
                best = Some((u, score, node));
            }
        }
        if let Some((u, _, node)) = best {
            pairs.push((u, d));
            anchors.push(node);
        }
    }
    Allocation::from_pairs(nu, nd, &pairs)
}

pub fn baseline_sa(
    dn: &DistributionNetwork,
    scenarios: &[Scenario],
    budget: usize,
    cfg: &SolveConfig,
    engine: Stage2Engine,
) -> Result<Evaluation, LbdError> {
    check_budget(dn, budget)?;
    evaluate_allocation(dn, &spread_allocation(dn, budget), scenarios, cfg, engine)
}
