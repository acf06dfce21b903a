use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("cannot decode image {path}: {reason}")]
    UndecodableImage { path: PathBuf, reason: String },

    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("pixel values out of range: {0}")]
    OutOfRange(String),

    #[error("bad .flo magic in {path}: found {found}")]
    BadMagic { path: PathBuf, found: f32 },

    #[error("truncated .flo file {path}: expected {expected} bytes, found {actual}")]
    TruncatedFile {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite or sentinel flow value at row {row}, column {col}")]
    InvalidFlowValue { row: usize, col: usize },

    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("degenerate warp: {0}")]
    DegenerateWarp(String),

    #[error("mask has no foreground pixels")]
    EmptyMask,

    #[error("backend did not complete request {dir} within {waited_ms} ms")]
    BackendTimeout { dir: PathBuf, waited_ms: u64 },

    #[error("incomplete sequence: expected {expected} frames, backend produced {found}")]
    IncompleteSequence { expected: usize, found: usize },

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("bad backend result: {0}")]
    BadResult(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("source {0:?} has no entries")]
    EmptySource(String),

    #[error("ground truth has no foreground pixels")]
    EmptyGroundTruth,

    #[error("no frames found in {0}")]
    EmptyDirectory(PathBuf),

    #[error("no mask for frame {0}")]
    MissingMask(PathBuf),

    #[error("duplicate pair id {0:?}")]
    DuplicatePairId(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed record in {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
