use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("trailing data: {0} unexpected bytes after payload")]
    TrailingData(usize),

    #[error("unknown dtype {0}")]
    UnknownDtype(u8),

    #[error("rank out of range: {0} (expected 2..=4)")]
    RankOutOfRange(usize),

    #[error("dims overflow: {0} does not fit in 32 bits")]
    DimsOverflow(usize),

    #[error("payload holds {found} values but dims {dims:?} require {expected}")]
    PayloadLength {
        dims: Vec<usize>,
        expected: usize,
        found: usize,
    },

    #[error("unknown code {0}")]
    UnknownCode(u32),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("malformed image: {0}")]
    Image(String),

    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn dims(msg: impl Into<String>) -> Self {
        Error::DimMismatch(msg.into())
    }

    /// Process exit code for this error: 2 for filesystem failures, 3 for
    /// everything that is a problem with the input itself.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            _ => 3,
        }
    }
}
