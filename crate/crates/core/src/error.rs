use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input does not have the expected shape: missing or unknown columns,
    /// malformed config.
    #[error("schema error: {0}")]
    Schema(String),

    /// Input is well formed but its values are unusable.
    #[error("data error: {0}")]
    Data(String),

    /// A zone cannot be fitted: a target category has no survey members, or
    /// a variable's marginals sum to zero where the zone population is not.
    #[error("infeasible: zone {zone}: {reason}")]
    Infeasible { zone: String, reason: String },

    /// Correlation is undefined because one side has zero variance.
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    /// Wraps an error with the pipeline stage it came from.
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

/// Coarse error classes, used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Schema,
    Data,
    Internal,
}

impl Error {
    pub fn schema(msg: impl Into<String>) -> Self {
        Error::Schema(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn infeasible(zone: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Infeasible {
            zone: zone.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Schema(_) => ErrorClass::Schema,
            // A missing input file is a usage problem, not bad data.
            Error::Io { .. } => ErrorClass::Schema,
            Error::Csv(e) => match e.kind() {
                csv::ErrorKind::Io(_) => ErrorClass::Schema,
                csv::ErrorKind::UnequalLengths { .. } => ErrorClass::Schema,
                _ => ErrorClass::Data,
            },
            Error::Data(_) | Error::Infeasible { .. } | Error::UndefinedCorrelation(_) => {
                ErrorClass::Data
            }
            Error::Stage { source, .. } => source.class(),
            Error::Internal(_) => ErrorClass::Internal,
        }
    }
}
