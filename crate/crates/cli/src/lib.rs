//! Batch runner for the involutive MCMC samplers: runs configured chains,
//! sweeps sampler settings, and drives the property-check suites.

pub mod checks;
pub mod config;
pub mod error;
pub mod experiments;
pub mod run;
pub mod sweep;
pub mod targets;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
