//! Config-driven experiment runner for the `hotsketch` engine.
//!
//! A run is described by a TOML file (see [`config::RunConfig`]), split into
//! tasks by [`experiments`], and driven with optional checkpointing by
//! [`runner`]. Outputs are one CSV of metric rows plus `summary.json`.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiments;
pub mod presets;
pub mod runner;

pub use config::{ConfigError, RunConfig};
pub use error::CliError;
pub use runner::{resume, run_path, run_text, RunOptions, RunReport, RunStatus};
