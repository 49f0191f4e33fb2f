use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("mesh topology error: {0}")]
    Topology(String),
    #[error("degenerate cell {cell} (area {area:e})")]
    DegenerateCell { cell: usize, area: f64 },
    #[error("unsupported refinement: {0}")]
    UnsupportedRefinement(String),
    #[error("{}:{line}: {msg}", file.display())]
    Ingestion {
        file: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("time step failed at t = {time}: {msg}")]
    StepFailure { time: f64, msg: String },
    #[error("projection error: {0}")]
    Projection(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable category, used by the command line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Argument(_) => "argument",
            Error::Domain(_) => "domain",
            Error::Topology(_) => "topology",
            Error::DegenerateCell { .. } => "degenerate-cell",
            Error::UnsupportedRefinement(_) => "refinement",
            Error::Ingestion { .. } => "ingestion",
            Error::StepFailure { .. } => "numerical",
            Error::Projection(_) => "projection",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }

    /// Process exit code for this category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::Config(_) => 2,
            Error::Ingestion { .. } | Error::Io { .. } => 3,
            Error::Topology(_) | Error::DegenerateCell { .. } | Error::UnsupportedRefinement(_) => 4,
            Error::Domain(_) | Error::StepFailure { .. } | Error::Projection(_) => 5,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn ingest(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Ingestion {
            file: path.into(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
