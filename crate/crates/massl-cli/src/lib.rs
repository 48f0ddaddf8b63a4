//! Harness around the `massl` library: configuration, the training loop,
//! checkpointing, metrics persistence, evaluation, and ablation sweeps.
//! The `massl` binary in this crate is a thin argument parser over these
//! modules.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod trainer;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Process exit code: 2 for configuration problems, 3 for everything
    /// else that goes wrong at runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 3,
        }
    }
}
