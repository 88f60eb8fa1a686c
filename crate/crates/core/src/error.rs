use std::path::PathBuf;

use thiserror::Error;

use crate::numerics::GraphError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] GraphError),

    #[error("category {category} outside 1..={categories}")]
    CategoryOutOfRange { category: usize, categories: usize },

    #[error("{what}: batch is empty")]
    EmptyBatch { what: &'static str },

    #[error("{what}: expected {expected} features per sample, got {got}")]
    FeatureMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("{path}: {kind} (offset {offset})")]
    Idx {
        path: PathBuf,
        offset: u64,
        kind: IdxErrorKind,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("proxy classifier accuracy {accuracy:.4} below required {required:.4}")]
    ProxyTooWeak { accuracy: f64, required: f64 },

    #[error("matrix square root: {0}")]
    MatrixSqrt(String),
}

/// What went wrong while reading an IDX file.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum IdxErrorKind {
    #[error("bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: u32, labels: u32 },
    #[error("truncated: need {needed} bytes, file has {available}")]
    Truncated { needed: u64, available: u64 },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by NaN/Inf values rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical(_) | Error::Graph(GraphError::NonFinite { .. })
        )
    }
}
