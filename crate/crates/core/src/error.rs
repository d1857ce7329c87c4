use std::path::PathBuf;

/// Coarse classification used by the command-line driver to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate column {column}: standard deviation {sd:e} is not above tolerance")]
    DegenerateColumn { column: usize, sd: f64 },

    /// Every result a run was meant to produce is unusable.
    #[error("numerical degeneracy: {0}")]
    Numerical(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("conflicting rows at lines {first_line} and {second_line} for key {key}")]
    Conflict {
        first_line: usize,
        second_line: usize,
        key: String,
    },

    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("out of range: {0}")]
    Range(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Range(_) => ErrorKind::Config,
            Error::DegenerateColumn { .. } | Error::Numerical(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
