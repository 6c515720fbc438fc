//! Test-phase simulation, baselines, grid evaluation and bound verification.

pub mod baselines;
pub mod grid;
pub mod report;
pub mod test_phase;
pub mod verify;

pub use baselines::{fixed_baselines, fixed_best_policy, fixed_minimax_policy, random_type_policy, FixedChoice};
pub use grid::{
    episode_curves, evaluate_grid, evaluate_points, with_baselines, Algorithm, AlgorithmSpec, EvalGridReport, EvalSettings,
};
pub use test_phase::{run_test_phase, Estimator, PolicyHandle, TestCell, TestRunRecord};
pub use verify::{run_bounds_campaign, verify_bounds_campaign, BoundsReport};
