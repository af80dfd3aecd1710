//! Experiment runners and command-line surface for transformation-flow VI.
//!
//! Each run writes plot-ready CSV files and a `run_record.toml` describing
//! the configuration, headline numbers, and a SHA-256 of every artifact.

pub mod cli;
pub mod config;
pub mod experiments;
pub mod record;

use thiserror::Error;
use tmvi_core::{ModelError, OracleError, ViError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Vi(#[from] ViError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

impl RunError {
    /// Numerical failures exit with status 1, everything else with 2.
    pub fn is_numeric(&self) -> bool {
        matches!(self, RunError::Vi(ViError::NonFinite { .. }))
    }
}
