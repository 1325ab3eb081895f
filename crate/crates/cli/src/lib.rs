//! Batch experiment runner for `disa-core`: reads a TOML experiment
//! description, runs single experiments or `u_scale` sweeps, and writes
//! traces, summaries and plot data.

pub mod config;
pub mod experiment;
pub mod plot;
pub mod sweep;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("solver error: {0}")]
    Runtime(disa_core::Error),
    #[error("no trace rows to plot")]
    EmptyTrace,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Io(_) | CliError::EmptyTrace => 1,
        }
    }
}
