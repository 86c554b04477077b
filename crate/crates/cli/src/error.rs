use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Input content could not be read as the expected format.
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Core {
        path: PathBuf,
        #[source]
        source: uavrisk_core::Error,
    },

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Engine(#[from] uavrisk_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn core(path: impl Into<PathBuf>, source: uavrisk_core::Error) -> Self {
        CliError::Core {
            path: path.into(),
            source,
        }
    }

    /// 1 for I/O and parse failures, 2 for validation and configuration failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } | CliError::Format { .. } => 1,
            CliError::Core { source, .. } | CliError::Engine(source) => match source {
                uavrisk_core::Error::Parse { .. } => 1,
                _ => 2,
            },
            CliError::Config(_) => 2,
        }
    }
}
