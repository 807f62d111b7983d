use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input matrix does not have the structure an operation requires.
    #[error("structural error: {0}")]
    Structural(String),

    /// Point lies outside the domain of an objective (log-det, log-barrier, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("initialization error: {0}")]
    Initialization(String),

    #[error("generation error: {0}")]
    Generation(String),

    /// Malformed input data; `row` is the 1-based data row (header excluded).
    #[error("ingestion error{}: {message}", location(*.row, .column.as_deref()))]
    Ingestion {
        row: Option<usize>,
        column: Option<String>,
        message: String,
    },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error on {path}: {source}")]
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

    /// Process exit code for this error class (2 usage, 3 data, 4 numerical).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Ingestion { .. } | Error::Io { .. } | Error::Initialization(_) => 3,
            Error::Structural(_) | Error::Dimension { .. } | Error::NonFinite(_) => 3,
            Error::Domain(_)
            | Error::Numerical(_)
            | Error::Generation(_)
            | Error::UndefinedMetric(_) => 4,
        }
    }
}

fn location(row: Option<usize>, column: Option<&str>) -> String {
    match (row, column) {
        (Some(r), Some(c)) => format!(" at row {r}, column {c}"),
        (Some(r), None) => format!(" at row {r}"),
        (None, Some(c)) => format!(" in column {c}"),
        (None, None) => String::new(),
    }
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { expected, found })
    }
}
