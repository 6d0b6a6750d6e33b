use std::io;
use std::path::PathBuf;

use cds_core::decoding::DecodeFailure;

/// Errors of the std layer: IO, file formats, configuration, and whatever the
/// engine reports.
#[derive(Debug, thiserror::Error)]
pub enum CdsError {
    #[error(transparent)]
    Engine(#[from] cds_core::Error),
    #[error(transparent)]
    Decode(#[from] Box<DecodeFailure>),
    #[error("cannot read {}: {source}", path.display())]
    Read { path: PathBuf, source: io::Error },
    #[error("cannot write {}: {source}", path.display())]
    Write { path: PathBuf, source: io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("config: {0}")]
    Config(String),
}

pub type CdsResult<T> = Result<T, CdsError>;

impl From<DecodeFailure> for CdsError {
    fn from(f: DecodeFailure) -> Self {
        CdsError::Decode(Box::new(f))
    }
}

impl CdsError {
    pub fn config(msg: impl Into<String>) -> Self {
        CdsError::Config(msg.into())
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl ToString) -> Self {
        CdsError::Parse { path: path.into(), line, message: message.to_string() }
    }

    /// Process exit code: 2 for bad configuration or input, 1 for failures
    /// while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CdsError::Read { .. } | CdsError::Parse { .. } | CdsError::Config(_) => 2,
            CdsError::Engine(cds_core::Error::InvalidArgument(_)) => 2,
            // the prompt itself could not be encoded
            CdsError::Decode(f) if f.tokens.is_empty() && matches!(f.error, cds_core::Error::InvalidArgument(_)) => 2,
            _ => 1,
        }
    }
}
