use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic")]
    BadMagic,

    #[error("version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("truncated payload")]
    Truncated,

    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    #[error("degenerate ranking")]
    DegenerateRanking,

    #[error("Fisher transform undefined at ±1")]
    FisherUndefined,

    #[error("sequence of {m} clips exceeds positional table of {m_max}")]
    SequenceTooLong { m: usize, m_max: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("config fingerprint mismatch: checkpoint has {found:016x}, config gives {expected:016x}")]
    FingerprintMismatch { expected: u64, found: u64 },

    #[error("empty dataset")]
    EmptyDataset,
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the error's category. Zero is reserved for success.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            Error::BadMagic | Error::VersionMismatch { .. } | Error::Truncated | Error::Malformed { .. } => 3,
            Error::Config(_) | Error::InvalidArgument(_) => 4,
            Error::Shape { .. } | Error::SequenceTooLong { .. } => 5,
            Error::NonFinite { .. } | Error::DegenerateRanking | Error::FisherUndefined => 6,
            Error::FingerprintMismatch { .. } => 7,
            Error::EmptyDataset => 8,
        }
    }
}
