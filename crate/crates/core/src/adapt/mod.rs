//! The input-adaptation loop: a rotation plus per-point displacement is
//! optimized so the transformed cloud matches one-step denoised estimates.

pub mod config;
mod engine;
mod loss;
pub mod optim;
mod transform;
mod vote;

pub use config::{lambda_schedule, lr_schedule, AdaptConfig, LossKind, OptimizerKind, RegKind, TransformKind};
pub use engine::{adapt_input, adapt_vote, write_trace_csv, TraceRow, VoteResult};
pub use loss::{adaptation_loss, LossOutput};
pub use transform::{apply_transform, compute_reg_weights, reg_weights, uniform_reg_weights, Linear, TransformParams};
pub use vote::{argmax, vote};
