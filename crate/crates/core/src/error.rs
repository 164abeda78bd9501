use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("zero-norm vector in {0}")]
    ZeroVector(&'static str),

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("instance set is empty")]
    EmptyInstanceSet,

    #[error("combiner expects {expected} inputs, got {found}")]
    ArityMismatch { expected: usize, found: usize },

    #[error("cache does not match combiner shapes: {0}")]
    StaleCache(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("temperature must be positive, got {0}")]
    NonPositiveTau(f64),

    #[error("target `{0}` is not in the gallery")]
    MissingTarget(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("gallery is empty")]
    EmptyGallery,

    #[error("no ground truth for query `{0}`")]
    MissingTruth(String),

    #[error("unknown query id `{0}`")]
    UnknownQuery(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: bad magic {found:?}", path = .path.display())]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("{path}: unsupported {what} {found}", path = .path.display())]
    UnsupportedVersion {
        path: PathBuf,
        what: &'static str,
        found: u32,
    },

    #[error("{path}: truncated file ({detail})", path = .path.display())]
    TruncatedFile { path: PathBuf, detail: String },

    #[error("{path}: non-finite value at element {index}", path = .path.display())]
    NonFiniteValue { path: PathBuf, index: usize },

    #[error("{path}: malformed content: {detail}", path = .path.display())]
    Malformed { path: PathBuf, detail: String },

    #[error("line {line}: referenced file {path} does not exist", path = .path.display())]
    DanglingPath { line: usize, path: PathBuf },

    #[error("line {line}: {field} has dimension {found}, expected {expected}")]
    ManifestDim {
        line: usize,
        field: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },

    #[error("line {line}: target `{id}` is not in the gallery")]
    UnresolvedTarget { line: usize, id: String },

    #[error("{path}:{line}: {source}", path = .path.display())]
    Json {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },

    #[error("I/O failure on {path}: {source}", path = .path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("CSV output failed: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the failure is caused by user-supplied data, flags or
    /// configuration rather than by the environment.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            Error::Csv(_) => false,
            _ => true,
        }
    }
}
