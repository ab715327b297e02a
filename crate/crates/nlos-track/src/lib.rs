//! Scenario files, parallel Monte-Carlo runs, CSV output and the command line
//! front end for [`nlos_track_core`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod experiment;
pub mod output;
pub mod scenarios;

pub use config::ScenarioFile;
pub use experiment::{run_experiment, summarize_run, FilterSummary};

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("config error: {0}")]
    Config(String),
    #[error("run failed: {0}")]
    Runtime(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

impl AppError {
    /// Process exit code: 2 for bad input, 3 for failures while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Config(_) => 2,
            AppError::Runtime(_) | AppError::Io { .. } => 3,
        }
    }

    pub(crate) fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| AppError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
