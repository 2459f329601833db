//! Model-agnostic DDPM machinery with clean-sample (x̂) prediction.
//!
//! The reverse process re-noises each prediction with the forward marginal:
//! `ẑ_{t−1} ~ q(x̂(ẑ_t), t−1)`, terminating with the bare prediction at
//! `t = 1`. Editing replaces the constrained entries with forward-diffused
//! known values after every step.

mod constraint;
mod longform;
mod sampler;
mod schedule;

pub use constraint::{EditConstraint, SMPL_LOWER_BODY, SMPL_UPPER_BODY};
pub use longform::{blend_weights, long_form_sample, overlapping_slices, stitch, LongFormOutput};
pub use sampler::{
    apply_constraint, apply_constraint_with_noise, guided_prediction, reverse_step, reverse_step_with_noise, sample,
    sample_observed, Denoiser, SamplerConfig, StepEvent,
};
pub use schedule::{cosine_schedule, forward_diffuse, NoiseSchedule};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffusionError {
    #[error("diffusion needs at least one step, got {0}")]
    InvalidSteps(usize),
    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),
    #[error("timestep {t} outside 0..={max}")]
    StepOutOfRange { t: usize, max: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: (usize, usize), right: (usize, usize) },
    #[error("constraint shape {constraint:?} does not match sample shape {sample:?}")]
    ConstraintShapeMismatch { constraint: (usize, usize), sample: (usize, usize) },
    #[error("bad long-form overlap: {0}")]
    BadOverlap(String),
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error("model error: {0}")]
    Model(String),
}
