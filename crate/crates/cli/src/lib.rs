//! Operational shell around `smash-core`: dataset files, run configuration,
//! binary checkpoints, report emission, and the `smash` command line.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod idx;
pub mod report;
pub mod telemetry;

pub use error::{CliError, Result};
