use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// `pointer` is a JSON pointer into the resolved config.
    #[error("config error at {pointer:?}: {message}")]
    Config { pointer: String, message: String },

    #[error(transparent)]
    Core(#[from] numlens::Error),

    #[error("report error: {0}")]
    Report(String),

    #[error("i/o failure on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            pointer: pointer.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 config, 3 input, 4 numeric failure.
    pub fn exit_code(&self) -> u8 {
        use numlens::Error as E;
        match self {
            CliError::Config { .. } => 2,
            CliError::Core(E::Config(_) | E::Split(_)) => 2,
            CliError::Core(E::Divergence { .. } | E::Degenerate(_)) => 4,
            CliError::Core(_) | CliError::Report(_) | CliError::Io { .. } => 3,
        }
    }
}
