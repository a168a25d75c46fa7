use std::path::Path;

use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] mda_core::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),

    #[error("frozen parameters changed during fusion training: {0}")]
    FrozenDrift(String),

    #[error("evaluation rates differ from training rates: {0}")]
    RateMismatch(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Stable short name for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Core(e) => e.kind(),
            HarnessError::Config(_) => "config",
            HarnessError::Divergence(_) => "divergence",
            HarnessError::MissingCheckpoint(_) => "missing-checkpoint",
            HarnessError::FrozenDrift(_) => "frozen-drift",
            HarnessError::RateMismatch(_) => "rate-mismatch",
            HarnessError::Io { .. } => "io",
        }
    }
}
