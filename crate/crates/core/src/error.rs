use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("truncation: {0}")]
    Truncation(String),

    #[error("unphysical state: {0}")]
    Physicality(String),

    #[error("invalid pulse: {0}")]
    Pulse(String),

    #[error("numerical instability: {0}")]
    Instability(String),

    #[error("step size too large: {0}")]
    StepSize(String),

    #[error("corrupted filter state: {0}")]
    CorruptedState(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("impossible jump: monitored channel annihilates the current state")]
    ImpossibleJump,

    #[error("internal consistency violation: {0}")]
    Internal(String),

    #[error("invalid value for `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("at t = {t:.6}: {source}")]
    AtTime {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("ensemble aborted: {failed} of {total} trajectories failed (first: {first})")]
    EnsembleAborted {
        failed: usize,
        total: usize,
        first: String,
    },
}

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn at_time(self, t: f64) -> Self {
        match self {
            e @ Error::AtTime { .. } => e,
            e => Error::AtTime {
                t,
                source: Box::new(e),
            },
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end:
    /// 2 validation, 3 numerical failure, 4 IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidDimension(_)
            | Error::Shape(_)
            | Error::Pulse(_)
            | Error::Unsupported(_)
            | Error::Validation { .. }
            | Error::Config(_) => 2,
            Error::Io { .. } | Error::Csv { .. } => 4,
            Error::AtTime { source, .. } => source.exit_code(),
            Error::Truncation(_)
            | Error::Physicality(_)
            | Error::Instability(_)
            | Error::StepSize(_)
            | Error::CorruptedState(_)
            | Error::ImpossibleJump
            | Error::Internal(_)
            | Error::EnsembleAborted { .. } => 3,
        }
    }
}
