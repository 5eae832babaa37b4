use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed input: {0}")]
    Format(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("invalid wedge index: {0}")]
    InvalidIndex(String),
    #[error("bad key: {0}")]
    BadKey(String),
    #[error("wedge mask is empty for scale {scale} direction {direction}")]
    EmptyMask { scale: usize, direction: usize },
    #[error("template projection is degenerate (relative energy {0:.3e}); offset incompatible with the template wedge")]
    DegenerateTemplate(f64),
    #[error("embedding clamps {fraction:.4} of the pixels (limit 0.01)")]
    Invisibility { fraction: f64 },
    #[error("no rotation template found")]
    NoTemplate,
    #[error("bad attack spec: {0}")]
    BadSpec(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    /// Process exit status used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Format(_) => 1,
            Error::BadKey(_) => 2,
            Error::Invisibility { .. } => 3,
            Error::NoTemplate => 5,
            Error::BadSpec(_) | Error::InvalidArgument(_) => 6,
            _ => 1,
        }
    }
}
