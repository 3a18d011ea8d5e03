use thiserror::Error;
use tor_core::tormat::LoadError;
use tor_core::worksharing::WorkshareError;
use tor_core::TorError;

/// Exit status: 2 parse error, 3 invalid matrix, 4 cap exceeded, 1 other.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid matrix: {0}")]
    Invalid(String),
    #[error("{0}")]
    Cap(String),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Parse(_) => 2,
            Self::Invalid(_) => 3,
            Self::Cap(_) => 4,
            Self::Other(_) => 1,
        }
    }
}

impl From<TorError> for CliError {
    fn from(e: TorError) -> Self {
        match e {
            TorError::CapExceeded { .. } => Self::Cap(e.to_string()),
            _ => Self::Invalid(e.to_string()),
        }
    }
}

impl From<LoadError> for CliError {
    fn from(e: LoadError) -> Self {
        match e {
            LoadError::Parse(p) => Self::Parse(p.to_string()),
            LoadError::Invalid(v) => Self::Invalid(v.to_string()),
        }
    }
}

impl From<WorkshareError> for CliError {
    fn from(e: WorkshareError) -> Self {
        match e {
            WorkshareError::Eval(t) => t.into(),
            other => Self::Other(anyhow::Error::new(other)),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Other(e.into())
    }
}
