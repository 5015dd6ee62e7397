//! Pseudo-label training: the clamped cross-entropy losses, decoupled-decay
//! AdamW, the epoch loop with on-the-fly negative sampling, and binary
//! checkpoints.

mod adamw;
mod checkpoint;
mod losses;
mod trainer;

pub use adamw::{adamw_step, AdamWConfig, OptimizerState};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, RngCheckpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use losses::{
    bce_loss, clamp_score, combined_loss, combined_loss_dlogits, pl_loss, BatchLoss, Reduction,
    TrainExample, SCORE_CLAMP_MAX, SCORE_CLAMP_MIN,
};
pub use trainer::{
    train, train_from_state, write_trainlog_csv, EpochRecord, LambdaTable, TrainConfig, TrainLog,
    TrainOutcome,
};

use thiserror::Error;

use crate::eval::EvalError;
use crate::models::ModelError;
use crate::splits::SplitError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("soft label {0} outside [0, 1]")]
    InvalidSoftLabel(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint schema violation: {0}")]
    Schema(String),
}
