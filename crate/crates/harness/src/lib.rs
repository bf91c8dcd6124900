//! Orchestration for the one-shot editing pipeline: synthetic datasets, toy
//! training, direction fitting, the five-variant benchmarks and figure grids.

pub mod bench;
pub mod cli;
pub mod config;
pub mod dataset_io;
pub mod grid;
pub mod records;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad flags, config files or missing inputs. Exit code 2.
    #[error("config error: {0}")]
    Config(String),
    /// Failures while running the pipeline. Exit code 3.
    #[error(transparent)]
    Runtime(#[from] alae_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

/// Version string embedded in every report.
pub const CODE_VERSION: &str = concat!("alae-harness ", env!("CARGO_PKG_VERSION"));
