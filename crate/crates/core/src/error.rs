use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("row {row} is not unit-normalized (L2 norm {norm})")]
    NotNormalized { row: usize, norm: f64 },

    #[error("k-means needs at least {k} points, got {points}")]
    TooFewPoints { points: usize, k: usize },

    #[error("corpus contains no token embeddings")]
    EmptyCorpus,

    #[error("dimension {dim} cannot be packed at {nbits} bits per component (must be a multiple of {})", 8 / nbits)]
    PackingUnsupported { dim: usize, nbits: u8 },

    #[error("bucket index {index} does not fit in {nbits} bits")]
    IndexOutOfRange { index: u8, nbits: u8 },

    #[error("{len} indices cannot be packed into whole bytes ({per_byte} per byte)")]
    LengthNotPackable { len: usize, per_byte: usize },

    #[error("passage {passage} has an empty token range")]
    EmptyPassageRange { passage: usize },

    #[error("corpus has {0} passages, more than 32-bit passage IDs can address")]
    TooManyPassages(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid search parameters: {0}")]
    InvalidParams(String),

    #[error("checksum mismatch for {file}")]
    ChecksumMismatch { file: String },

    #[error("unsupported index format version {0}")]
    UnsupportedVersion(u32),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("embedding file header mismatch: {0}")]
    HeaderMismatch(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("results reference query id {0:?} that has no relevance judgments")]
    UnknownQueryId(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
