//! Command-line surface for the binlab workspace: config files, dataset
//! loaders, CSV reports, the gradient-check suite, and worker-parallel
//! Monte-Carlo runs. Everything numeric lives in `binlab-core`; this crate
//! adds the parts that need files, clocks, and threads.

pub mod cifar;
pub mod config;
pub mod csvio;
pub mod idx;
pub mod runner;
pub mod verify;

use std::io;

/// Errors of the CLI layer.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("format error: {0}")]
    Format(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] binlab_core::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Worker count for Monte-Carlo trials, from `BINLAB_WORKERS` (default 1).
/// Results never depend on this value.
pub fn worker_count() -> usize {
    std::env::var("BINLAB_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}
