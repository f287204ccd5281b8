use std::path::{Path, PathBuf};

use thiserror::Error;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_FORMAT: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: orthoprompt::Error,
    },
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError::Usage(message.into())
    }

    pub fn format(path: &Path, message: impl Into<String>) -> Self {
        CliError::Format {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        use orthoprompt::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Format { .. } | CliError::Io { .. } => EXIT_FORMAT,
            CliError::Core { source, .. } => match source {
                E::NumericalFailure(_) | E::DegenerateInput(_) => EXIT_NUMERICAL,
                E::InvalidConfig(_) | E::MissingSpans(_) | E::InvalidToken { .. } => EXIT_USAGE,
                E::InvalidMatrix(_)
                | E::ShapeMismatch(_)
                | E::EmptySegment { .. }
                | E::MissingFrames(_)
                | E::DuplicateLabel(_)
                | E::InvalidFrame { .. } => EXIT_FORMAT,
            },
        }
    }
}

/// Attaches the flag or file that produced a core error.
pub trait Context<T> {
    fn context(self, context: impl Into<String>) -> Result<T, CliError>;
}

impl<T> Context<T> for orthoprompt::Result<T> {
    fn context(self, context: impl Into<String>) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core {
            context: context.into(),
            source,
        })
    }
}
