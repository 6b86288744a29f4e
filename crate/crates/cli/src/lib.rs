//! Configuration-driven experiment runner for the whisker sensor twin.
//!
//! Each experiment turns a [`config::ScenarioConfig`] into CSV tables and a
//! JSON [`report::ExperimentReport`] whose metrics carry targets and
//! tolerances.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod csvio;
pub mod experiments;
pub mod fit;
pub mod report;

use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error {0}")]
    Config(String),
    #[error("ingest error: {0}")]
    Ingest(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Model(#[from] whisker_core::Error),
}

impl CliError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }

    /// Process exit code: 2 for usage or configuration problems, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 3,
        }
    }
}
