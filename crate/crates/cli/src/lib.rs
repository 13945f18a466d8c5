//! Experiment driver for the multiclass network toolkit: TOML configurations,
//! CSV and JSON outputs, and the `sbdnet` subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use config::ExperimentConfig;
pub use error::CliError;
