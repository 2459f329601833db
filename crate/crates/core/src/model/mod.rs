//! Transformer-decoder denoiser, training objective and training loop.

mod checkpoint;
mod loss;
mod net;
mod optim;
mod params;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use loss::{
    loss_contact, loss_joint, loss_simple, loss_vel, tape_loss_contact, tape_loss_joint, tape_loss_simple,
    tape_loss_vel, tape_total_loss, total_loss, LossBreakdown,
};
pub use net::{timestep_embedding, DanceDenoiser};
pub use optim::{Adam, Adan, Ema, LrSchedule, Optimizer, OptimizerKind};
pub use params::Params;
pub use train::{train_step, ClipReport, StepReport, TrainState, TrainingExample};

use thiserror::Error;

use crate::diffusion::DiffusionError;
use crate::kinematics::{KinematicsError, SMPL_POSE_DIM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch { what: &'static str, expected: (usize, usize), got: (usize, usize) },
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },
    #[error("sequence too short: need at least {needed} frames, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl From<ModelError> for DiffusionError {
    fn from(e: ModelError) -> Self {
        DiffusionError::Model(e.to_string())
    }
}

/// Architecture and training hyperparameters of the denoiser.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub mlp_dim: usize,
    /// Dropout on attention and feed-forward outputs during training.
    pub dropout: f64,
    pub cond_dim: usize,
    /// Maximum clip length `N`; shorter inputs use a prefix of the
    /// positional embeddings.
    pub seq_len: usize,
    pub pose_dim: usize,
    /// Probability of replacing the conditioning with the null embedding
    /// during training.
    pub cond_dropout_prob: f64,
    pub ema_decay: f64,
}

impl ModelConfig {
    /// Full-size configuration: 8 layers, 8 heads, width 512, 5 s clips at 30 fps.
    pub fn paper(cond_dim: usize) -> Self {
        Self {
            layers: 8,
            heads: 8,
            model_dim: 512,
            mlp_dim: 1024,
            dropout: 0.1,
            cond_dim,
            seq_len: 150,
            pose_dim: SMPL_POSE_DIM,
            cond_dropout_prob: 0.25,
            ema_decay: 0.9999,
        }
    }

    /// Laptop-sized configuration: 2 s clips, width 64.
    pub fn desk(cond_dim: usize) -> Self {
        Self { layers: 2, heads: 4, model_dim: 64, mlp_dim: 128, seq_len: 60, ..Self::paper(cond_dim) }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("model_dim", self.model_dim),
            ("mlp_dim", self.mlp_dim),
            ("cond_dim", self.cond_dim),
            ("seq_len", self.seq_len),
            ("pose_dim", self.pose_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::InvalidConfig(format!("{name} must be at least 1")));
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return Err(ModelError::InvalidConfig(format!(
                "model_dim {} is not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        if !self.model_dim.is_multiple_of(2) {
            return Err(ModelError::InvalidConfig("model_dim must be even for the timestep embedding".into()));
        }
        let probs = [("dropout", self.dropout), ("cond_dropout_prob", self.cond_dropout_prob), ("ema_decay", self.ema_decay)];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(ModelError::InvalidConfig(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.dropout >= 1.0 {
            return Err(ModelError::InvalidConfig("dropout must be below 1".into()));
        }
        Ok(())
    }
}

/// Weights of the auxiliary loss terms; the simple objective has weight 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub pos: f64,
    pub vel: f64,
    pub contact: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { pos: 1.0, vel: 1.0, contact: 1.0 }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self { pos: 0.0, vel: 0.0, contact: 0.0 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, w) in [("lambda_pos", self.pos), ("lambda_vel", self.vel), ("lambda_contact", self.contact)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(ModelError::InvalidConfig(format!("{name} must be finite and ≥ 0, got {w}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(ModelConfig::paper(35).validate().is_ok());
        assert!(ModelConfig::desk(35).validate().is_ok());
        assert!(ModelConfig { heads: 3, ..ModelConfig::desk(35) }.validate().is_err());
        assert!(ModelConfig { cond_dim: 0, ..ModelConfig::desk(35) }.validate().is_err());
        assert!(ModelConfig { ema_decay: 1.5, ..ModelConfig::desk(35) }.validate().is_err());
        assert!(LossWeights { vel: -1.0, ..LossWeights::default() }.validate().is_err());
        assert!(LossWeights { pos: f64::NAN, ..LossWeights::default() }.validate().is_err());
    }
}
