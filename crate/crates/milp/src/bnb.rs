//! Depth-first branch-and-bound on top of the bounded simplex.

use crate::lp::LpOptions;
use crate::model::MilpInstance;
use crate::simplex::{BasisSnapshot, LpData, Outcome, Simplex};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MilpOptions {
    pub lp: LpOptions,
    /// Relative optimality gap used for pruning.
    pub mip_gap: f64,
    pub abs_gap: f64,
    pub int_tol: f64,
    pub node_limit: usize,
}

impl Default for MilpOptions {
    fn default() -> Self {
        MilpOptions {
            lp: LpOptions::default(),
            mip_gap: 1e-7,
            abs_gap: 1e-9,
            int_tol: 1e-6,
            node_limit: 2_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MilpStatus {
    Optimal,
    /// An incumbent exists but optimality was not proven. Not produced by
    /// the built-in search, which reports `Limit` instead; kept for engines
    /// plugged in through [`Solver`](crate::Solver).
    Feasible,
    Infeasible,
    Unbounded,
    /// Node or iteration limit reached; `x` holds the best incumbent if any.
    Limit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpSolution {
    pub status: MilpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub bound: f64,
    pub nodes: usize,
    pub lp_iterations: usize,
}

impl MilpSolution {
    pub fn has_incumbent(&self) -> bool {
        !self.x.is_empty()
    }
}

struct Node {
    changes: Vec<(usize, f64, f64)>,
    basis: BasisSnapshot,
    parent_bound: f64,
}

/// Solves `inst` to optimality within the configured gap.
///
/// When `upper_bound` is given (in full objective terms, offset included),
/// nodes whose relaxation exceeds it are pruned from the start. Node
/// relaxations are the same as without the bound, so the search tree can
/// only shrink. The caller must make sure some feasible point attains the
/// bound; otherwise the result is `Infeasible`.
pub fn solve_milp(inst: &MilpInstance, upper_bound: Option<f64>, opts: &MilpOptions) -> MilpSolution {
    let n = inst.num_vars();
    let bound_cutoff = upper_bound.map_or(f64::INFINITY, |ub| {
        let ub = ub - inst.obj_offset;
        ub + 1e-9 * (1.0 + ub.abs())
    });

    let ints = inst.integer_vars();
    let snap_tol = 10.0 * opts.lp.tolerances.primal;
    let mut lp = LpData::from_instance(inst);
    for &j in &ints {
        lp.lo[j] = (lp.lo[j] - opts.int_tol).ceil();
        lp.hi[j] = (lp.hi[j] + opts.int_tol).floor();
        if lp.lo[j] > lp.hi[j] {
            return finish(MilpStatus::Infeasible, Vec::new(), f64::INFINITY, f64::INFINITY, 0, 0);
        }
    }
    let mut sx = Simplex::new(lp, opts.lp.tolerances);
    if let Some(limit) = opts.lp.iteration_limit {
        sx.iter_limit = limit;
    }

    let mut nodes = 1usize;
    let outcome = sx.solve(f64::INFINITY);
    match outcome {
        Outcome::Optimal => {}
        Outcome::Infeasible | Outcome::Cutoff => {
            return finish(
                MilpStatus::Infeasible,
                Vec::new(),
                f64::INFINITY,
                f64::INFINITY,
                nodes,
                sx.iterations,
            )
        }
        Outcome::Unbounded => {
            return finish(
                MilpStatus::Unbounded,
                Vec::new(),
                f64::NEG_INFINITY,
                f64::NEG_INFINITY,
                nodes,
                sx.iterations,
            )
        }
        Outcome::IterationLimit => {
            return finish(
                MilpStatus::Limit,
                Vec::new(),
                f64::INFINITY,
                f64::NEG_INFINITY,
                nodes,
                sx.iterations,
            )
        }
    }
    let root_bound = sx.objective();
    let root_lo = sx.lp.lo.clone();
    let root_hi = sx.lp.hi.clone();

    let mut incumbent: Vec<f64> = Vec::new();
    let mut inc_obj = f64::INFINITY;
    let mut stack: Vec<Node> = Vec::new();
    let mut changes: Vec<(usize, f64, f64)> = Vec::new();
    let mut limit_hit = false;
    let mut first = true;

    loop {
        let cutoff = if inc_obj.is_finite() {
            inc_obj - opts.abs_gap.max(opts.mip_gap * inc_obj.abs())
        } else {
            bound_cutoff
        };
        let solved = if first {
            first = false;
            Outcome::Optimal
        } else {
            nodes += 1;
            sx.lp.lo.clone_from(&root_lo);
            sx.lp.hi.clone_from(&root_hi);
            for &(j, lo, hi) in &changes {
                sx.lp.lo[j] = lo;
                sx.lp.hi[j] = hi;
            }
            sx.solve(cutoff)
        };

        let mut branched = false;
        match solved {
            Outcome::Optimal => {
                let obj = sx.objective();
                if obj < cutoff {
                    // Branch as (variable, down child upper, up child lower).
                    let mut pick =
                        most_fractional(&sx.x, &ints, opts.int_tol).map(|j| (j, sx.x[j].floor(), sx.x[j].ceil()));
                    if pick.is_none() {
                        let mut x = sx.x[..n].to_vec();
                        for &j in &ints {
                            x[j] = x[j].round();
                        }
                        // Rounding within the integrality tolerance can still
                        // break rows with large coefficients; keep branching
                        // on the residual fractions in that case.
                        if inst.max_violation(&x) > snap_tol {
                            pick = residual_branch(&sx.x, &ints, &sx.lp.lo, &sx.lp.hi)
                                .or_else(|| open_split(&x, &ints, &sx.lp.lo, &sx.lp.hi));
                        }
                        if pick.is_none() {
                            if inst.max_violation(&x) > snap_tol {
                                x.copy_from_slice(&sx.x[..n]);
                            }
                            inc_obj = obj;
                            incumbent = x;
                        }
                    }
                    match pick {
                        None => {}
                        Some((j, fl, ce)) => {
                            let v = sx.x[j];
                            let (cur_lo, cur_hi) = (sx.lp.lo[j], sx.lp.hi[j]);
                            let down = (j, cur_lo, fl);
                            let up = (j, ce, cur_hi);
                            let (dive, other) = if v - fl < ce - v { (down, up) } else { (up, down) };
                            let mut other_changes = changes.clone();
                            other_changes.push(other);
                            stack.push(Node {
                                changes: other_changes,
                                basis: sx.snapshot(),
                                parent_bound: obj,
                            });
                            changes.push(dive);
                            branched = true;
                        }
                    }
                }
            }
            Outcome::Infeasible | Outcome::Cutoff => {}
            Outcome::Unbounded => {
                return finish(
                    MilpStatus::Unbounded,
                    Vec::new(),
                    f64::NEG_INFINITY,
                    f64::NEG_INFINITY,
                    nodes,
                    sx.iterations,
                )
            }
            Outcome::IterationLimit => limit_hit = true,
        }

        if !branched && stack.is_empty() {
            break;
        }
        if nodes >= opts.node_limit {
            limit_hit = true;
            break;
        }
        if branched {
            continue;
        }
        match stack.pop() {
            Some(node) => {
                changes = node.changes;
                sx.restore(&node.basis);
            }
            None => break,
        }
    }

    let open_bound = stack
        .iter()
        .map(|nd| nd.parent_bound)
        .fold(f64::INFINITY, f64::min)
        .min(if limit_hit { root_bound } else { f64::INFINITY });
    let offset = inst.obj_offset;
    if incumbent.is_empty() {
        let status = if limit_hit {
            MilpStatus::Limit
        } else {
            MilpStatus::Infeasible
        };
        let bound = if limit_hit { open_bound + offset } else { f64::INFINITY };
        return finish(status, Vec::new(), f64::INFINITY, bound, nodes, sx.iterations);
    }
    let objective = inst.objective(&incumbent);
    if limit_hit {
        let bound = (open_bound + offset).min(objective);
        finish(MilpStatus::Limit, incumbent, objective, bound, nodes, sx.iterations)
    } else {
        finish(
            MilpStatus::Optimal,
            incumbent,
            objective,
            objective,
            nodes,
            sx.iterations,
        )
    }
}

fn finish(
    status: MilpStatus,
    x: Vec<f64>,
    objective: f64,
    bound: f64,
    nodes: usize,
    lp_iterations: usize,
) -> MilpSolution {
    MilpSolution {
        status,
        x,
        objective,
        bound,
        nodes,
        lp_iterations,
    }
}

fn most_fractional(x: &[f64], ints: &[usize], tol: f64) -> Option<usize> {
    let mut best = None;
    let mut best_score = tol;
    for &j in ints {
        let f = x[j] - x[j].floor();
        let score = f.min(1.0 - f);
        if score > best_score {
            best_score = score;
            best = Some(j);
        }
    }
    best
}

/// Split around the nearest integer for a variable whose value is off by
/// less than the integrality tolerance, skipping splits that would not
/// tighten the current bounds.
fn residual_branch(x: &[f64], ints: &[usize], lo: &[f64], hi: &[f64]) -> Option<(usize, f64, f64)> {
    let mut best = None;
    let mut best_gap = 0.0;
    for &j in ints {
        let r = x[j].round();
        let gap = (x[j] - r).abs();
        if gap <= best_gap {
            continue;
        }
        let split = if x[j] < r {
            (r > lo[j]).then_some((r - 1.0, r))
        } else {
            (r < hi[j]).then_some((r, r + 1.0))
        };
        if let Some((d, u)) = split {
            best_gap = gap;
            best = Some((j, d, u));
        }
    }
    best
}

/// Split some integer variable whose box is not yet a single value, at its
/// rounded value. Used when the point is integral within tolerance but
/// still not trustworthy.
fn open_split(x: &[f64], ints: &[usize], lo: &[f64], hi: &[f64]) -> Option<(usize, f64, f64)> {
    let j = *ints.iter().find(|&&j| lo[j] < hi[j])?;
    let r = x[j].clamp(lo[j], hi[j]);
    Some(if r < hi[j] { (j, r, r + 1.0) } else { (j, r - 1.0, r) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{solve_lp, LpStatus};
    use crate::model::{Row, RowSense, VarKind};

    fn knapsack() -> MilpInstance {
        // max 5a + 4b + 3c s.t. 2a + 3b + c <= 5, 4a + b + 2c <= 11, 3a + 4b + 2c <= 8
        let mut m = MilpInstance::new();
        let a = m.add_var("a", 0.0, 1.0, -5.0, VarKind::Binary);
        let b = m.add_var("b", 0.0, 1.0, -4.0, VarKind::Binary);
        let c = m.add_var("c", 0.0, 1.0, -3.0, VarKind::Binary);
        m.add_row(Row::new("r1", vec![(a, 2.0), (b, 3.0), (c, 1.0)], RowSense::Le, 5.0));
        m.add_row(Row::new("r2", vec![(a, 4.0), (b, 1.0), (c, 2.0)], RowSense::Le, 11.0));
        m.add_row(Row::new("r3", vec![(a, 3.0), (b, 4.0), (c, 2.0)], RowSense::Le, 8.0));
        m
    }

    #[test]
    fn small_knapsack() {
        let s = solve_milp(&knapsack(), None, &MilpOptions::default());
        assert_eq!(s.status, MilpStatus::Optimal);
        assert!((s.objective + 9.0).abs() < 1e-9);
        assert!(s.bound <= s.objective + 1e-9);
    }

    #[test]
    fn upper_bound_does_not_change_optimum() {
        let base = solve_milp(&knapsack(), None, &MilpOptions::default());
        let cut = solve_milp(&knapsack(), Some(base.objective), &MilpOptions::default());
        assert_eq!(cut.status, MilpStatus::Optimal);
        assert!((cut.objective - base.objective).abs() < 1e-9);
        assert!(cut.nodes <= base.nodes);
    }

    #[test]
    fn fixed_binaries_match_residual_lp() {
        let m = knapsack().with_fixed(&[(0, 1.0), (1, 0.0), (2, 1.0)]);
        let milp = solve_milp(&m, None, &MilpOptions::default());
        let lp = solve_lp(&m, &LpOptions::default());
        assert_eq!(lp.status, LpStatus::Optimal);
        assert!((milp.objective - lp.objective).abs() < 1e-12);
        assert_eq!(milp.nodes, 1);
    }

    #[test]
    fn infeasible_cut_propagates() {
        let m = knapsack().add_cut(Row::new("bad", vec![], RowSense::Ge, 1.0)).unwrap();
        assert_eq!(
            solve_milp(&m, None, &MilpOptions::default()).status,
            MilpStatus::Infeasible
        );
    }

    #[test]
    fn vacuous_and_tight_cuts_keep_optimum() {
        let base = knapsack();
        let opt = solve_milp(&base, None, &MilpOptions::default()).objective;
        let v = base.add_cut(Row::new("v", vec![], RowSense::Ge, -1.0)).unwrap();
        assert!((solve_milp(&v, None, &MilpOptions::default()).objective - opt).abs() < 1e-9);
        let coeffs = base.vars.iter().enumerate().map(|(j, d)| (j, d.obj)).collect();
        let t = base.add_cut(Row::new("t", coeffs, RowSense::Le, opt)).unwrap();
        assert!((solve_milp(&t, None, &MilpOptions::default()).objective - opt).abs() < 1e-9);
    }

    #[test]
    fn near_integral_point_breaking_a_steep_row_is_not_accepted() {
        // LP optimum x = 1e-7 sits inside the integrality tolerance, but
        // rounding it to 0 violates the row.
        let mut m = MilpInstance::new();
        let x = m.add_var("x", 0.0, 1.0, 1.0, VarKind::Binary);
        let y = m.add_var("y", 0.0, 1.0, 3.0, VarKind::Binary);
        m.add_row(Row::new("steep", vec![(x, 1e7), (y, 1.0)], RowSense::Ge, 1.0));
        let s = solve_milp(&m, None, &MilpOptions::default());
        assert_eq!(s.status, MilpStatus::Optimal);
        assert!((s.objective - 1.0).abs() < 1e-9, "{}", s.objective);
        assert!(m.max_violation(&s.x) < 1e-9);
    }

    #[test]
    fn general_integers() {
        // min -x - y s.t. 2x + 2y <= 7, x, y integer in [0, 10]
        let mut m = MilpInstance::new();
        let x = m.add_var("x", 0.0, 10.0, -1.0, VarKind::Integer);
        let y = m.add_var("y", 0.0, 10.0, -1.0, VarKind::Integer);
        m.add_row(Row::new("r", vec![(x, 2.0), (y, 2.0)], RowSense::Le, 7.0));
        let s = solve_milp(&m, None, &MilpOptions::default());
        assert!((s.objective + 3.0).abs() < 1e-9);
    }

    #[test]
    fn node_limit_reports_limit() {
        let opts = MilpOptions {
            node_limit: 1,
            ..Default::default()
        };
        let s = solve_milp(&knapsack(), None, &opts);
        assert_eq!(s.status, MilpStatus::Limit);
    }
}
