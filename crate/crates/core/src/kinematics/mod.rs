//! Pose representation and skeletal kinematics.
//!
//! A pose frame is laid out as `[contacts(4) | rot6d(6·J) | root translation(3)]`;
//! with the 24-joint SMPL skeleton that is `4 + 144 + 3 = 151` values.
//! World space is z-up, in meters.

mod clip;
mod contacts;
mod fk;
mod rotation;
mod skeleton;
pub mod tape_fk;

pub use clip::{MotionClip, PoseLayout, CONTACT_DIM, SMPL_POSE_DIM};
pub use contacts::{extract_contact_labels, ContactThresholds};
pub use fk::{finite_difference, forward_kinematics, global_rotations};
pub use rotation::{matrix_to_rot6d, rot6d_to_matrix, Mat3, Vec3};
pub use skeleton::{Skeleton, SMPL_JOINTS};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("degenerate 6-DOF rotation{}", location(.frame, .joint))]
    DegenerateRotation { frame: Option<usize>, joint: Option<usize> },
    #[error("matrix is not a rotation (orthogonality error {orthogonality:.3e}, det {det:.6})")]
    NotARotation { orthogonality: f64, det: f64 },
    #[error("sequence too short: need at least {needed} frames, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),
    #[error("pose layout mismatch: expected {expected} columns, got {got}")]
    LayoutMismatch { expected: usize, got: usize },
    #[error("fps must be positive and finite, got {0}")]
    InvalidFps(f64),
}

fn location(frame: &Option<usize>, joint: &Option<usize>) -> String {
    match (frame, joint) {
        (Some(f), Some(j)) => format!(" at frame {f}, joint {j}"),
        (Some(f), None) => format!(" at frame {f}"),
        (None, Some(j)) => format!(" at joint {j}"),
        (None, None) => String::new(),
    }
}
