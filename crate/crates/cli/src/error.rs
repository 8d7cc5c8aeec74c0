//! CLI error type and its exit-code mapping.

use std::path::Path;

use mimic_core::Error;
use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    /// Process exit status: 2 configuration, 3 data, 4 training failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Core(e) => match e {
                Error::InvalidConfig(_) | Error::InvalidArgument(_) => 2,
                Error::Divergence { .. } | Error::NonFiniteLoss { .. } | Error::NonFiniteGradient { .. } => 4,
                Error::Corpus(_)
                | Error::Format(_)
                | Error::Leakage(_)
                | Error::VersionMismatch { .. }
                | Error::Io(_)
                | Error::Json(_)
                | Error::Csv(_) => 3,
                _ => 1,
            },
        }
    }

    /// Prefixes data errors with the file they came from.
    pub fn at(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}
