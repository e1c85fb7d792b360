//! Conditioning networks and their training loop.

pub mod adam;
pub mod mlp;
pub mod train;

pub use adam::{Adam, AdamConfig};
pub use mlp::{Mlp, MlpSpec, Mode};
pub use train::{fit, fit_observed, sample_objective, LogRow, LrSchedule, Model, StopReason, TrainConfig, TrainLog, Validation};
