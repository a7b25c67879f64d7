//! Adam and the mini-batch training loop.

mod adam;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState, DEFAULT_LR};
pub use train::{
    batch_gradient, evaluate_improvement, evaluate_loss, split_validation, train, EpochRecord, Executor, Sequential,
    TrainConfig, TrainOutcome, Trainable,
};
