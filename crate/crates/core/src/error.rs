use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed or truncated file contents.
    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported archive version: expected {expected}, found {found}")]
    Version { expected: String, found: String },

    /// Input violates a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    /// Data carries no usable signal (coincident points, zero-rank targets).
    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("{}: {source}", path.display())]
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

    /// Process exit code: 2 for bad input, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) | Error::Degenerate(_) => 3,
            _ => 2,
        }
    }
}
