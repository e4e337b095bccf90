use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {0}: must be at least 1")]
    InvalidDimension(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is singular: rank {rank} < {n}")]
    Singular { rank: usize, n: usize },

    #[error("generation failed after {attempts} attempts: {what}")]
    GenerationFailure { attempts: usize, what: String },

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("sentence is not in the support of the language")]
    NotInSupport,

    #[error("model assigns zero probability to a supported outcome at position {position}")]
    InfiniteLoss { position: usize },

    #[error("unknown symbol {0:?}")]
    UnknownSymbol(char),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
