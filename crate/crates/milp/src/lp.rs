//! Linear programming entry point.

use crate::model::{MilpInstance, RowSense};
use crate::simplex::{LpData, Outcome, Simplex, Tolerances};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// Pivoting stalled beyond the iteration cap.
    NumericalFailure,
}

/// Result of an LP solve.
///
/// `duals[i]` is the sensitivity of the optimal value to the right-hand side
/// of row `i`: nonnegative on `Ge` rows, nonpositive on `Le` rows. At an
/// optimum, `objective = obj_offset + sum_i duals[i] * rhs[i] + sum_j reduced_costs[j] * x[j]`,
/// where the second sum only picks up variables resting at a bound.
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

impl LpSolution {
    fn failed(status: LpStatus, n: usize, m: usize, iterations: usize) -> Self {
        LpSolution {
            status,
            x: vec![0.0; n],
            duals: vec![0.0; m],
            reduced_costs: vec![0.0; n],
            objective: match status {
                LpStatus::Unbounded => f64::NEG_INFINITY,
                _ => f64::INFINITY,
            },
            iterations,
        }
    }

    /// Row duals expressed for the `>=` orientation of each row, so every
    /// inequality multiplier is nonnegative.
    pub fn ge_duals(&self, inst: &MilpInstance) -> Vec<f64> {
        inst.rows
            .iter()
            .zip(&self.duals)
            .map(|(r, &y)| if r.sense == RowSense::Le { -y } else { y })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpOptions {
    pub tolerances: Tolerances,
    /// Overrides the default iteration cap when set.
    pub iteration_limit: Option<usize>,
}

impl Default for LpOptions {
    fn default() -> Self {
        LpOptions {
            tolerances: Tolerances::default(),
            iteration_limit: None,
        }
    }
}

/// Solves the continuous relaxation of `inst` (integrality is ignored).
pub fn solve_lp(inst: &MilpInstance, opts: &LpOptions) -> LpSolution {
    let lp = LpData::from_instance(inst);
    let mut sx = Simplex::new(lp, opts.tolerances);
    if let Some(limit) = opts.iteration_limit {
        sx.iter_limit = limit;
    }
    let outcome = sx.solve(f64::INFINITY);
    extract(inst, &sx, outcome)
}

pub(crate) fn extract(inst: &MilpInstance, sx: &Simplex, outcome: Outcome) -> LpSolution {
    let n = inst.num_vars();
    let m = inst.num_rows();
    let status = match outcome {
        Outcome::Optimal => LpStatus::Optimal,
        Outcome::Infeasible | Outcome::Cutoff => LpStatus::Infeasible,
        Outcome::Unbounded => LpStatus::Unbounded,
        Outcome::IterationLimit => LpStatus::NumericalFailure,
    };
    if status != LpStatus::Optimal {
        return LpSolution::failed(status, n, m, sx.iterations);
    }
    let x: Vec<f64> = sx.x[..n].to_vec();
    LpSolution {
        status,
        objective: inst.objective(&x),
        x,
        duals: sx.y[..m].to_vec(),
        reduced_costs: sx.d[..n].to_vec(),
        iterations: sx.iterations,
    }
}
