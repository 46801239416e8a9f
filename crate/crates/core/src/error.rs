use std::path::PathBuf;

/// Error type shared by the whole crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed sidecar {path}: {reason}")]
    Header { path: PathBuf, reason: String },

    #[error("raw payload size mismatch for {path}: expected {expected} bytes, found {found}")]
    PayloadSize {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("volume of {voxels} voxels exceeds the oracle size guard of {limit}")]
    OracleSizeGuard { voxels: usize, limit: usize },
}

impl Error {
    pub(crate) fn invalid_parameter(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by files rather than by parameter values.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::PayloadSize { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
