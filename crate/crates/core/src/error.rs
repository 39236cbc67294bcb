use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("EV instance {index} has an empty feasible set")]
    InfeasibleInstance { index: usize },

    #[error("invalid configuration parameter `{param}`: {msg}")]
    Config { param: &'static str, msg: String },

    #[error("{file}:{line}: {msg}")]
    Schema { file: String, line: u64, msg: String },

    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
    Error::Io {
        path: path.into(),
        source,
    }
}

impl Error {
    /// True for errors caused by bad input data rather than the environment.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Io { .. } => false,
            Error::Csv(e) => !e.is_io_error(),
            _ => true,
        }
    }
}
