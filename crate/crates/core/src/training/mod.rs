//! Losses and metrics, surrogate-gradient BPTT, AdamW and the
//! train / validate / select loop.

mod adamw;
mod bptt;
pub mod gradcheck;
mod loss;
mod trainer;

pub use adamw::{adamw_step, clip_global_norm, AdamWConfig, AdamWState};
pub use bptt::{bptt_backward, ResetGrad};
pub use loss::{mean_relative_error, mean_relative_error_vectors, mse_loss, ErrorMode, LossKind};
pub use trainer::{
    evaluate, predict_samples, raw_targets, train, train_from, EpochRecord, SplitMetrics,
    TrainConfig, TrainOutcome, TrainReport,
};
