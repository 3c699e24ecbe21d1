use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: String, found: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid skeleton: {0}")]
    Skeleton(String),

    #[error("degenerate pose: {0}")]
    DegeneratePose(String),

    #[error("value outside domain: {0}")]
    Domain(String),

    #[error("depth undefined for joint {joint}: slice is all zero")]
    UndefinedDepth { joint: usize },

    #[error("batch norm needs at least 2 samples in train mode, got {0}")]
    BatchNorm(usize),

    #[error("rank-deficient point set: {0}")]
    Rank(String),

    #[error("joint {joint} is behind the camera (z = {z})")]
    BehindCamera { joint: usize, z: f64 },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("usage: {0}")]
    Usage(String),

    #[error("numerical check failed: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn dim(expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage, 2 data/format, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Divergence { .. } | Error::Numerical(_) => 3,
            _ => 2,
        }
    }
}
