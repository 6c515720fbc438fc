//! Concrete parametric families.

pub mod gathering;
pub mod worstcase;

pub use gathering::{GatheringConfig, GatheringGame, JointState};
pub use worstcase::{build_worstcase_pair, WorstCasePair};

use crate::error::Result;

/// Builds the joint family for a gathering configuration.
pub fn build_joint_family(config: GatheringConfig) -> Result<GatheringGame> {
    GatheringGame::new(config)
}
