use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("kernel is not invertible: {0}")]
    NonInvertibleKernel(String),

    #[error("masked kernel entry {0:?} has no gradient")]
    MaskedIndex((usize, usize)),

    #[error("matrix of dimension {n} exceeds the dense size guard of {limit}")]
    SizeGuard { n: usize, limit: usize },

    #[error("matrix is not unit lower triangular (entry ({row}, {col}) = {value})")]
    NotUnitLowerTriangular { row: usize, col: usize, value: f64 },

    #[error("matrix is singular (pivot {pivot} at column {col})")]
    Singular { col: usize, pivot: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-finite activation after layer {index} ({name})")]
    NonFiniteLayer { index: usize, name: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("bad IDX magic number {found:#010x} (expected {expected:#010x})")]
    BadMagic { found: u32, expected: u32 },

    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
