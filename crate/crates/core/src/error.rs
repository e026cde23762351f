use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("degenerate trajectory: {0}")]
    DegenerateTrajectory(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("line search failed after {backtracks} backtracks")]
    LineSearchFailed { backtracks: usize },

    #[error("config error in `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { key: key.into(), message: message.into() }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Format(_) | Error::Io { .. } | Error::Label { .. } | Error::Shape(_) => 3,
            Error::DegenerateTrajectory(_)
            | Error::Dimension(_)
            | Error::LineSearchFailed { .. }
            | Error::Numerical(_) => 4,
        }
    }
}
