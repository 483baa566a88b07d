//! Scenario files, artifact writers and the `resopt` subcommands.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

pub use commands::{calibrate, run, run_scenario, validate, RunSummary, DEFAULT_OUT_DIR, OUT_DIR_ENV};
pub use config::{RunConfig, ScenarioConfig};
pub use error::{CliError, Result};
