//! Experiment orchestration for the `kacwalk` binary: config handling, commands and output files.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{run, Command, Report};
pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
