use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}:{line}:{col}: {message}", path.display())]
    Config {
        path: PathBuf,
        line: usize,
        col: usize,
        message: String,
    },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] djscc::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    /// 2 for anything the caller can fix in their inputs, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        use djscc::Error as E;
        match self {
            Self::Config { .. } | Self::Usage(_) => 2,
            Self::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
            Self::Io { .. } | Self::Internal(_) => 1,
            Self::Core(e) => match e {
                E::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
                E::Diverged { .. } | E::Io(_) | E::Csv(_) => 1,
                _ => 2,
            },
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Self::Io {
            context: context.into(),
            source,
        }
    }
}
