use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("framing error: {0}")]
    Framing(String),

    #[error("{}:{line}: parse error: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate record id {id:?} in {} (line {line})", path.display())]
    DuplicateId {
        path: PathBuf,
        id: String,
        line: usize,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{} already exists (pass --force to overwrite)", .0.display())]
    OutputExists(PathBuf),

    #[error("record {id:?}: {source}")]
    Record {
        id: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category used by the CLI's error line.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Framing(_) => "framing",
            Error::Parse { .. } => "parse",
            Error::DuplicateId { .. } => "duplicate-id",
            Error::Io { .. } => "io",
            Error::Config(_) => "config",
            Error::Shape(_) => "shape",
            Error::Argument(_) => "argument",
            Error::Divergence { .. } => "divergence",
            Error::Checkpoint(_) => "checkpoint",
            Error::OutputExists(_) => "output-exists",
            Error::Record { source, .. } => source.category(),
        }
    }
}
