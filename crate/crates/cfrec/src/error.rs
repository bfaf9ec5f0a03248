use std::io;
use std::path::Path;

use cfrec_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    /// 1 usage/config, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Io { .. } | CliError::Data(_) => 2,
            CliError::Core(e) => match e {
                CoreError::Config(_) | CoreError::Timestep { .. } => 1,
                CoreError::NonFinite(_) | CoreError::NonFiniteLoss { .. } => 3,
                _ => 2,
            },
        }
    }

    pub fn io(context: impl AsRef<Path>, source: io::Error) -> Self {
        CliError::Io {
            context: context.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
