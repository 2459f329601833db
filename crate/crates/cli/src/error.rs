use std::path::PathBuf;

use motiondiff::audio::AudioError;
use motiondiff::diffusion::DiffusionError;
use motiondiff::formats::FormatError;
use motiondiff::kinematics::KinematicsError;
use motiondiff::metrics::MetricsError;
use motiondiff::model::ModelError;
use thiserror::Error;

/// Failure of a command, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid flags or configuration; nothing was computed.
    #[error("config error: {0}")]
    Config(String),
    /// Missing, malformed or mismatched input data.
    #[error("data error: {0}")]
    Data(String),
    /// Non-finite values during training or sampling.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub(crate) fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }

    pub(crate) fn missing(path: PathBuf) -> Self {
        CliError::Data(format!("{}: not found", path.display()))
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<AudioError> for CliError {
    fn from(e: AudioError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<KinematicsError> for CliError {
    fn from(e: KinematicsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(m) => CliError::Config(m),
            ModelError::NonFiniteLoss { .. } | ModelError::NonFiniteActivation(_) => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<DiffusionError> for CliError {
    fn from(e: DiffusionError) -> Self {
        match e {
            DiffusionError::InvalidConfig(m) => CliError::Config(m),
            DiffusionError::InvalidSteps(_) | DiffusionError::InvalidSchedule(_) => CliError::Config(e.to_string()),
            DiffusionError::Model(ref m) if m.contains("non-finite") => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::NonConvergentSqrt(_) => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
