use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("unknown token id {id} (vocabulary size {vocab_size})")]
    UnknownId { id: u32, vocab_size: usize },
    #[error("sequence of length {len} exceeds maximum {max}")]
    Length { len: usize, max: usize },
    #[error("trace was built without a backward cache")]
    MissingCache,
    #[error("duplicate token string {0:?}")]
    Duplicate(String),
    #[error("{0:?} already encodes to a single token")]
    SingleToken(String),
    #[error("pattern error: {0}")]
    Pattern(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("checksum mismatch: header says {expected:08x}, payload is {actual:08x}")]
    Checksum { expected: u32, actual: u32 },
    #[error("training error at step {step}: {reason}")]
    Training { step: usize, reason: String },
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse classification used by the command-line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Usage,
            Error::Numeric(_) | Error::Training { .. } | Error::DegenerateInput(_) => {
                ErrorClass::Numeric
            }
            _ => ErrorClass::Data,
        }
    }
}
