//! Controlled gradient assembly, optimizers and the alternating training loop.

mod controlled;
mod optim;
mod train;

pub use controlled::{controlled_gradient, ControlledGradient};
pub use optim::{adam_step, sgd_step, AdamState, Optimizer, OptimizerConfig, OptimizerKind};
pub use train::{alternating_step, StepReport, TrainSettings, Trainer};
