//! Self-contained LP and MILP solver.
//!
//! LPs are solved with a bounded-variable revised simplex over a sparse LU
//! factorization; MILPs with depth-first branch-and-bound that warm starts
//! each node from its parent's basis. LP solutions carry row duals and
//! reduced costs.

mod bnb;
mod factor;
mod lp;
mod model;
mod simplex;

pub use bnb::{solve_milp, MilpOptions, MilpSolution, MilpStatus};
pub use lp::{solve_lp, LpOptions, LpSolution, LpStatus};
pub use model::{MilpInstance, ModelError, Row, RowSense, VarDef, VarKind};
pub use simplex::Tolerances;

/// Narrow solve interface so another engine can stand in for the built-in one.
pub trait Solver {
    fn solve_lp(&self, inst: &MilpInstance) -> LpSolution;
    fn solve_milp(&self, inst: &MilpInstance, upper_bound: Option<f64>) -> MilpSolution;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BuiltinSolver {
    pub options: MilpOptions,
}

impl Solver for BuiltinSolver {
    fn solve_lp(&self, inst: &MilpInstance) -> LpSolution {
        solve_lp(inst, &self.options.lp)
    }

    fn solve_milp(&self, inst: &MilpInstance, upper_bound: Option<f64>) -> MilpSolution {
        solve_milp(inst, upper_bound, &self.options)
    }
}
