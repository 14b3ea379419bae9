//! A small permutation-invariant point-cloud classifier with hand-written
//! gradients, its training loop and the online consistency update.

mod model;
mod online;
mod train;

pub use model::{Checkpoint, Forward, Layer, PointClassifier, CHECKPOINT_FORMAT, DEFAULT_HIDDEN};
pub use online::{batch_consistency, kl_consistency_loss, kl_divergence, online_update, OnlineAdapter, OnlineConfig};
pub use train::{accuracy, cross_entropy, train_source, TrainConfig};
