//! Configuration-driven experiment runner.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod runner;

pub use config::{ExperimentConfig, Params};
pub use error::CliError;
pub use runner::{list_experiments, replay, run, run_config, run_with_threads, RunReport};
