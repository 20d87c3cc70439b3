//! Experiment driver for probabilistic spatial transformers: configuration,
//! checkpoints and the `train`, `eval`, `augment` and `sweep` commands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;

pub use checkpoint::Checkpoint;
pub use config::{DatasetKind, ExperimentConfig};
pub use error::{exit_code, CliError};
