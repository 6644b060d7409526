//! Experiment orchestration on top of `kippo_core`: single runs, multi-seed
//! comparisons, loss ablations, hyperparameter sweeps and SVG learning
//! curves.
//!
//! Every command resolves to a list of [`experiment::Cell`]s (one config and
//! seed each, one output directory each), runs them on a bounded thread pool
//! and aggregates strictly after the cells have finished.

pub mod commands;
pub mod experiment;
pub mod plot;
pub mod report;

use std::path::PathBuf;

use kippo_core::trainer::{ConfigError, TrainError};
use thiserror::Error;

/// Environment variable that overrides the default output root (`runs`).
pub const OUTPUT_ROOT_VAR: &str = "KIPPO_OUTPUT_ROOT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Missing(String),
}

impl CliError {
    /// 1 config error, 2 runtime abort, 3 missing inputs.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Missing(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(c) => CliError::Config(c.to_string()),
            TrainError::Env(env) => CliError::Config(env.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub fn io_err(path: &std::path::Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// `--out`, then `$KIPPO_OUTPUT_ROOT`, then `./runs`.
pub fn output_root(explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}
