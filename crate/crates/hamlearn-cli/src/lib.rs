//! Command-line harness for simulation, recovery, shadow estimation and figure workloads.

pub mod commands;
pub mod config;
pub mod error;
pub mod figures;
pub mod io;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
