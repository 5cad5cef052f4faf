//! Adam and the minibatch training loop.

mod adam;
mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use trainer::{train, train_with, EpochRecord, TrainConfig, TrainHistory, TrainOutcome};
