//! The `mgcn` pipeline: dataset generation, both training stages,
//! reconstruction, evaluation and ablation sweeps, driven by one JSON config.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod train;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
