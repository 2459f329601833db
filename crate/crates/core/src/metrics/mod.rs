//! Evaluation metrics: physical foot contact, beat alignment, kinetic and
//! geometric motion features, diversity, Frechet distance and bone-length
//! drift.

mod beat;
mod distance;
mod features;
mod pfc;
mod report;

pub use beat::{beat_alignment, kinematic_beats, kinematic_beats_from_positions, DEFAULT_SIGMA_FRAMES};
pub use distance::{diversity, frechet_distance, spearman, FeatureDistribution, FRECHET_JITTER};
pub use features::{
    bone_length_drift, geometric_features, geometric_features_from_positions, kinetic_features,
    kinetic_features_from_positions, GEOMETRIC_PREDICATES, GEOMETRIC_VERSION,
};
pub use pfc::{pfc, pfc_from_positions, FootReduction, Pfc, PfcOptions};
pub use report::{evaluate_clip, Aggregate, ClipMetrics, MetricReport};

use thiserror::Error;

use crate::kinematics::KinematicsError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("sequence too short: need at least {needed} frames, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("no music beats to align against")]
    EmptyMusicBeats,
    #[error("need at least 2 clips, got {0}")]
    TooFewClips(usize),
    #[error("feature dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("matrix square root did not converge (eigenvalue {0:.3e})")]
    NonConvergentSqrt(f64),
    #[error("bone {0} has zero length")]
    ZeroLengthBone(String),
    #[error("skeleton has no joint named {0}")]
    MissingJoint(&'static str),
    #[error("positions have {got} joints, skeleton has {expected}")]
    JointCountMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}
