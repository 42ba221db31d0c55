//! Verifiable rewards for role-aware reasoning traces.
//!
//! Parses `<think>`/`<focus>`/`\boxed{}` trajectories, scores them against
//! gold annotations, normalizes rewards per character group with running
//! statistics, and evaluates group-relative policy optimization objectives.

pub mod fixtures;
pub mod grouping;
pub mod grpo;
pub mod metrics;
pub mod normalizer;
pub mod pipeline;
pub mod reward;
pub mod toy;
pub mod trajectory;

pub use grouping::{CharacterProfile, GroupModel};
pub use grpo::GrpoConfig;
pub use normalizer::{NormalizedRewards, NormalizerState, RewardType, WeightVector};
pub use reward::{GoldAnnotation, RefRewardConfig, RewardVector};
pub use trajectory::{parse_trajectory, FocusDimension, ParsedTrajectory};
