//! Configuration parsing and experiment dispatch for the `tensortomo` binary.

pub mod config;
pub mod runner;

pub use config::{validate_config, Command, ConfigError, ExperimentConfig};
pub use runner::{run, Invocation, RunError, RunOutputs};
