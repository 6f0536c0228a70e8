use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic {found:?}, expected \"RPSF\"")]
    BadMagic { path: PathBuf, found: String },

    #[error("{path}: unsupported format version {found} (expected {expected})")]
    VersionMismatch {
        path: PathBuf,
        found: u16,
        expected: u16,
    },

    #[error("{path}: unsupported dtype code {found} (only 0 = f32le is supported)")]
    UnsupportedDtype { path: PathBuf, found: u8 },

    #[error("{path}: truncated payload, expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("{path}: {found} trailing bytes after payload")]
    TrailingBytes { path: PathBuf, found: u64 },

    #[error("invalid feature map {image_id:?}: {reason}")]
    InvalidFeatureMap { image_id: String, reason: String },

    #[error("manifest {path}: {message}")]
    ManifestParse { path: PathBuf, message: String },

    #[error("manifest: duplicate image_id {0:?}")]
    DuplicateImageId(String),

    #[error("manifest entry {image_id:?}: malformed box #{index} {bbox:?}: {reason}")]
    MalformedBox {
        image_id: String,
        index: usize,
        bbox: [i64; 4],
        reason: String,
    },

    #[error("manifest entry {image_id:?}: {reason}")]
    InvalidEntry { image_id: String, reason: String },

    #[error("unknown image_id {0:?}")]
    UnknownImage(String),

    #[error("dimension mismatch: expected {expected} channels, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("missing ground truth: {kind} required by {metric} but absent for image {image_id:?}")]
    MissingGroundTruth {
        kind: &'static str,
        metric: String,
        image_id: String,
    },

    #[error("query patch ({row}, {col}) of {image_id:?} has zero norm")]
    ZeroNormQuery {
        image_id: String,
        row: usize,
        col: usize,
    },

    #[error("patch ({row}, {col}) outside {height}x{width} grid")]
    PatchOutOfRange {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },

    #[error("no predictor for class {0:?}")]
    NoPredictor(Option<u32>),

    #[error("{path}: invalid PGM: {reason}")]
    Pgm { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
