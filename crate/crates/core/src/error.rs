use std::path::PathBuf;

/// Errors produced by the library.
///
/// Variants are grouped by the exit code the command-line tool reports for
/// them: data problems map to 2, numerical failures to 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("singular configuration: {0}")]
    Singular(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("bad checkpoint header: {0}")]
    Checkpoint(String),

    #[error("stale forward tape: recorded at parameter version {tape}, model is at {model}")]
    StaleTape { tape: u64, model: u64 },

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

    /// Process exit code for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 1,
            Error::Dimension { .. }
            | Error::Parse { .. }
            | Error::Checkpoint(_)
            | Error::StaleTape { .. }
            | Error::Io { .. } => 2,
            Error::NonFinite(_) | Error::Singular(_) | Error::Numerical(_) => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
