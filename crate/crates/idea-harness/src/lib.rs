//! Experiment harness for the asset-library adaptation loop.
//!
//! [`config`] parses the flat `key=value` experiment files, [`domains`]
//! builds the synthetic domain family, [`runner`] executes a configured
//! stream under one of the loop variants and writes per-step CSV rows plus a
//! run summary, and [`report`] aggregates finished runs into a table and
//! plot-ready series.

pub mod config;
pub mod domains;
pub mod logging;
pub mod report;
pub mod runner;

use thiserror::Error;

/// Harness-level failures, split by exit code.
#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad configuration (unknown key, malformed value, invalid combination).
    /// CLI exit code 1.
    #[error("config error: {0}")]
    Config(String),

    /// Anything that goes wrong while running: I/O, solver failures,
    /// malformed asset files. CLI exit code 2.
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl From<idea_core::IdeaError> for HarnessError {
    fn from(e: idea_core::IdeaError) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Runtime(format!("i/o: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
