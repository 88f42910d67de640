//! Adam optimization of the quadruple objective, plus checkpoints.

mod adam;
mod checkpoint;
mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CheckpointConfig};
pub use trainer::{train, train_quadruples, EpochLog, TrainConfig, TrainOutcome};
