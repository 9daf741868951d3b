//! The `drate` command line: simulate datasets, estimate treatment effects
//! on a CSV file, run benchmark grids and reshape their results for plotting.

pub mod commands;
pub mod config;
pub mod report;

use thiserror::Error;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments or configuration.
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] drate_core::Error),

    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 for usage and configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(drate_core::Error::Config(_)) => 2,
            _ => 1,
        }
    }
}
