use crate::data::DataError;
use crate::model::ModelError;
use crate::optim::OptimError;

use super::ConfigError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("training diverged at step {step}: {message}")]
    Diverged { step: u64, message: String },
    #[error("sentence {sentence}: {message}")]
    Alignment { sentence: usize, message: String },
    #[error("model artifact {path}: {message}")]
    Integrity { path: String, message: String },
    #[error("model artifact {path}: format version {found} is not supported (expected {expected})")]
    Version { path: String, found: u32, expected: u32 },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl HarnessError {
    /// Process exit code: 1 usage/config, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Model(ModelError::Config(_)) => 1,
            HarnessError::Model(e) if e.is_numeric() => 3,
            HarnessError::Optim(_) | HarnessError::Diverged { .. } => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.display().to_string(), source }
    }
}
