//! Command failures and their process exit codes.

use std::path::PathBuf;

use thiserror::Error;

use noisec::attacks::AttackError;
use noisec::data::DataError;
use noisec::eval::EvalError;
use noisec::models::ModelError;
use noisec::numcore::NumError;
use noisec::pipeline::PipelineError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing prerequisite {path}: {reason}")]
    Missing { path: PathBuf, reason: String },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Missing { .. } | CliError::Io { .. } => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn missing(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        CliError::Missing {
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e.root() {
            EvalError::InvalidConfig(_) => CliError::Config(e.to_string()),
            EvalError::Attack(AttackError::InvalidParameter(_)) => CliError::Config(e.to_string()),
            EvalError::Model(ModelError::InvalidConfig(_)) => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(_) => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<AttackError> for CliError {
    fn from(e: AttackError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<NumError> for CliError {
    fn from(e: NumError) -> Self {
        CliError::Numeric(e.to_string())
    }
}
