use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit can report.
///
/// Variants are grouped by the kind of fault so callers (the CLI in
/// particular) can map them onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("domain alignment error: {0}")]
    Alignment(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("class {class} has no samples")]
    DegenerateClass { class: usize },

    #[error("baseline accuracy is zero; improvement ratio undefined")]
    DegenerateBaseline,

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("homogeneous objective requires equal input dimensions (source {source_dim}, target {target_dim})")]
    Homogeneity { source_dim: usize, target_dim: usize },

    #[error("{path}:{line}: {msg}")]
    Format { path: PathBuf, line: usize, msg: String },

    #[error("config error at `{field}`: {msg}")]
    Schema { field: String, msg: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub fn schema(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Coarse classification used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Format { .. } => ErrorKind::DataFormat,
            Error::Schema { .. } => ErrorKind::Config,
            Error::Io { .. } => ErrorKind::Io,
            Error::Numerical(_)
            | Error::DegenerateBaseline
            | Error::UndefinedCorrelation(_)
            | Error::DegenerateClass { .. } => ErrorKind::Numerical,
            Error::Dimension(_)
            | Error::Parameter(_)
            | Error::Alignment(_)
            | Error::Split(_)
            | Error::Homogeneity { .. } => ErrorKind::Config,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    DataFormat,
    Numerical,
    Io,
}
