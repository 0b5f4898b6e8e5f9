use kktgen::training::TrainError;
use std::path::Path;
use thiserror::Error;

/// Errors grouped by the exit code they map to.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, config, or input files.
    #[error("{0}")]
    Usage(String),
    /// A check ran and failed.
    #[error("{0}")]
    Verification(String),
    /// Training diverged or did not converge.
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Verification(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    /// An I/O or parse failure on `path`.
    pub fn file(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Usage(format!("{}: {err}", path.display()))
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NotConverged { .. }
            | TrainError::NonFinite { .. }
            | TrainError::Diverged { .. } => CliError::Numeric(e.to_string()),
            TrainError::ProfileInvalid { .. } => CliError::Verification(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

macro_rules! usage_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Usage(e.to_string())
            }
        }
    )*};
}

usage_from!(
    kktgen::models::ModelError,
    kktgen::quasi::QuasiError,
    kktgen::kkt::KktError,
    kktgen::data::DataError,
    kktgen::autodiff::AutodiffError
);

pub type Result<T> = std::result::Result<T, CliError>;
