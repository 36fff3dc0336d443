//! Experiment runner for the tensor sensing benchmarks: configuration, runs,
//! deterministic CSV traces, summaries, diagnostics reports and SVG plots.

pub mod check;
pub mod config;
pub mod plot;
pub mod run;

use std::path::PathBuf;

pub use config::{Cell, ExperimentConfig, Method};
pub use run::{execute, run, sweep, RunArtifact, TRACE_HEADER};

/// Environment variable capping the number of sweep threads.
pub const THREADS_ENV: &str = "GNP_BENCH_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Solver(#[from] gnp_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("plot error: {0}")]
    Plot(String),
}

impl BenchError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            BenchError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub(crate) fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<(), BenchError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| BenchError::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| BenchError::io(path, e))
}
