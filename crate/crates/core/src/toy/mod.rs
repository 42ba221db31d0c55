//! Desk-scale trainer: a categorical policy over fixed candidate pools,
//! trained with the full score → normalize → aggregate → GRPO loop.

pub mod policy;
pub mod task;
pub mod trainer;

use thiserror::Error;

use crate::grpo::GrpoError;

pub use policy::{ToyBatch, ToyCategoricalPolicy};
pub use task::{default_task, ToyPrompt, ToyTask};
pub use trainer::{emit_curves, run_training, StepRecord, TrainingLog, TrainingOutcome};

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("invalid task: {0}")]
    Invalid(String),
    #[error("no candidate pool for prompt `{0}`")]
    MissingPool(String),
    #[error("group size {group_size} exceeds pool size {pool} of prompt `{prompt}`")]
    GroupTooLarge {
        prompt: String,
        group_size: usize,
        pool: usize,
    },
    #[error("invalid weights: every weight must be finite and non-negative")]
    Weights,
    #[error("learning rate must be finite and positive, got {0}")]
    LearningRate(f64),
    #[error("cannot write curves for an empty log")]
    EmptyLog,
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
