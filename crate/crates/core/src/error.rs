use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    /// Malformed serialized data. `offset` is the byte position where decoding stopped.
    #[error("corrupt data at byte {offset}: {reason}")]
    Corruption { offset: usize, reason: String },
    #[error("activation group {0} has no quantization scheme")]
    NoScheme(String),
    #[error("cannot classify activation edge: {0}")]
    Classification(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate series: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn corrupt(offset: usize, reason: impl Into<String>) -> Self {
        Error::Corruption {
            offset,
            reason: reason.into(),
        }
    }
}
