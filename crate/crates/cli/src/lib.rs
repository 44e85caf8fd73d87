//! Experiment driver: configuration, synthetic data, artifacts, tables and plots.

pub mod artifact;
pub mod commands;
pub mod config;
pub mod error;
pub mod svg;

pub use artifact::ArtifactContainer;
pub use commands::{cmd_greedy, cmd_optimize, cmd_solve, generate_data};
pub use config::ExperimentConfig;
pub use error::{CliError, Result};
