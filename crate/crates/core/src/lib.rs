//! Two-stage DER allocation and post-storm repair scheduling for radial
//! distribution networks.
//!
//! Stage I chooses sites and assigns DERs. Stage II, per failure scenario,
//! schedules line repairs over periods and dispatches islanded DERs under
//! LinDistFlow. The allocation is optimized over a sampled scenario set by
//! a Benders loop whose subproblems are bounded by a greedy heuristic.

pub mod greedy;
pub mod lbd;
pub mod metrics;
pub mod network;
pub mod stage2;

pub use greedy::{greedy_stage2, GreedyResult};
pub use lbd::{run_lbd, solve_stage2, CutKind, LbdOptions, LbdResult, Stage2Engine};
pub use network::{
    enumerate_allocations, horizon, load_network, parse_network, sample_scenarios, validate_network, Allocation,
    DistributionNetwork, NetworkInput, Scenario,
};
pub use stage2::{build_period_mip, build_stage2, extract_plan, RestorationPlan, SolveConfig};

/// The 4-node example network bundled with the crate.
pub const FIXTURE_4NODE: &str = include_str!("../data/fixture_4node.json");
