//! Experiment orchestration for parallel-measurement tomography: JSON
//! configs, seed derivation, and the tomography, sweep and holdout pipelines
//! behind the `ptomo` binary.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod seeds;

pub use config::ExperimentConfig;
pub use error::CliError;
pub use pipeline::{run_budget_sweep, run_holdout_validation, run_tomography};
pub use seeds::SeedTree;
