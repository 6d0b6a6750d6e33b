use alloc::string::String;

/// Errors produced by the decoding engine.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("token id {id} is outside a vocabulary of {size} tokens")]
    ForeignToken { id: u32, size: usize },
    #[error("cannot bridge token {token:?} into the target vocabulary")]
    Bridge { token: String },
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
