use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("zero matrix has no dominant direction")]
    ZeroMatrix,

    #[error("no residual to fit")]
    NoResidual,

    #[error("empty candidate set")]
    EmptyCandidates,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Malformed PGM input; `offset` is the byte offset where parsing failed.
    #[error("malformed PGM at byte {offset}: {message}")]
    Pgm { offset: usize, message: String },

    /// Malformed CSV input; `line` is 1-based.
    #[error("malformed CSV at line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
