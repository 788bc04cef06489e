use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{what} not found: {}", path.display())]
    MissingPath { what: &'static str, path: PathBuf },

    #[error(transparent)]
    Core(#[from] din_rank::Error),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for usage and configuration, 3 for data, 4 for numeric divergence.
    pub fn exit_code(&self) -> i32 {
        use din_rank::Error as E;
        match self {
            CliError::Usage(_) | CliError::MissingPath { .. } => 2,
            CliError::Core(E::Config(_) | E::GroupBudget { .. }) => 2,
            CliError::Core(E::Divergence { .. }) => 4,
            CliError::Core(_) | CliError::Io { .. } => 3,
        }
    }
}

/// Fails with exit code 2 when `path` does not exist.
pub fn require_path(what: &'static str, path: &std::path::Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingPath {
            what,
            path: path.to_path_buf(),
        })
    }
}
