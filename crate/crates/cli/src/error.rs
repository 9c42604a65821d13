use std::path::{Path, PathBuf};

use sbtm_core::corpus::CorpusError;
use sbtm_core::evaluation::EvalError;
use sbtm_core::models::{CheckpointError, ModelError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Validation(String),
    #[error("numerical abort: {0}")]
    Numerical(String),
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io { .. } => 4,
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    pub fn corpus(path: &Path, e: CorpusError) -> Self {
        match e {
            CorpusError::Io(m) => CliError::Io {
                path: path.to_path_buf(),
                message: m,
            },
            CorpusError::Parse { .. } => CliError::Validation(format!("{}: {e}", path.display())),
            other => CliError::Validation(other.to_string()),
        }
    }

    pub fn checkpoint(path: &Path, e: CheckpointError) -> Self {
        match e {
            CheckpointError::VocabularyMismatch { .. } => CliError::Validation(format!("{}: {e}", path.display())),
            CheckpointError::Model(m) => m.into(),
            other => CliError::io(path, other),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            ModelError::Config(m) => CliError::Config(m),
            ModelError::Io(m) => CliError::Io {
                path: PathBuf::new(),
                message: m,
            },
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}
