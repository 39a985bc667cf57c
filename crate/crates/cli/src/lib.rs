//! Command-line front end for `attnop-core`: experiment configs, dataset
//! containers, checkpoints, and the `datagen`, `train`, `eval`, `sweep`,
//! `complexity` and `verify` commands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod container;
pub mod error;
pub mod verify;

pub use commands::{
    cmd_complexity, cmd_datagen, cmd_eval, cmd_sweep_resolution, cmd_train, cmd_verify_convergence, SweepRow, TrainRun,
};
pub use config::{DataSource, ExperimentConfig};
pub use error::{CliError, CliResult};
