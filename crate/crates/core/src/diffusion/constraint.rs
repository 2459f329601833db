use ndarray::{s, Array2};

use super::DiffusionError;
use crate::kinematics::PoseLayout;

/// SMPL joints treated as upper body: spine chain, neck, head, collars, arms.
pub const SMPL_UPPER_BODY: [usize; 15] = [3, 6, 9, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23];

/// SMPL joints treated as lower body: pelvis (root orientation) and legs.
pub const SMPL_LOWER_BODY: [usize; 9] = [0, 1, 2, 4, 5, 7, 8, 10, 11];

/// Known values plus a binary mask over `frames × pose_dim`; masked entries
/// (`true`) are imposed on the sample.
#[derive(Clone, Debug, PartialEq)]
pub struct EditConstraint {
    known: Array2<f64>,
    mask: Array2<bool>,
}

impl EditConstraint {
    pub fn new(known: Array2<f64>, mask: Array2<bool>) -> Result<Self, DiffusionError> {
        if known.dim() != mask.dim() {
            return Err(DiffusionError::ShapeMismatch { left: known.dim(), right: mask.dim() });
        }
        Ok(Self { known, mask })
    }

    /// No entries constrained.
    pub fn empty(frames: usize, dim: usize) -> Self {
        Self { known: Array2::zeros((frames, dim)), mask: Array2::from_elem((frames, dim), false) }
    }

    fn with_frames(reference: &Array2<f64>, frames: impl IntoIterator<Item = usize>) -> Self {
        let mut mask = Array2::from_elem(reference.dim(), false);
        for f in frames {
            mask.row_mut(f).fill(true);
        }
        Self { known: reference.clone(), mask }
    }

    /// Seed-motion continuation: the first `n` frames come from `reference`.
    pub fn continuation(reference: &Array2<f64>, n: usize) -> Self {
        Self::with_frames(reference, 0..n.min(reference.nrows()))
    }

    /// In-betweening: the first and last `n` frames come from `reference`.
    pub fn inbetween(reference: &Array2<f64>, n: usize) -> Self {
        let total = reference.nrows();
        let n = n.min(total);
        Self::with_frames(reference, (0..n).chain(total - n..total))
    }

    /// Keyframes: the listed frames come from `reference`.
    pub fn keyframes(reference: &Array2<f64>, frames: &[usize]) -> Self {
        Self::with_frames(reference, frames.iter().copied().filter(|&f| f < reference.nrows()))
    }

    /// Joint-wise constraint over all frames: rotations of `joints`, plus the
    /// root translation and/or contact labels when requested.
    pub fn joints(
        reference: &Array2<f64>,
        layout: PoseLayout,
        joints: &[usize],
        root_translation: bool,
        contacts: bool,
    ) -> Result<Self, DiffusionError> {
        if reference.ncols() != layout.dim() {
            return Err(DiffusionError::ShapeMismatch {
                left: reference.dim(),
                right: (reference.nrows(), layout.dim()),
            });
        }
        let mut mask = Array2::from_elem(reference.dim(), false);
        for &j in joints.iter().filter(|&&j| j < layout.joints()) {
            mask.slice_mut(s![.., layout.rotation(j)]).fill(true);
        }
        if root_translation {
            mask.slice_mut(s![.., layout.translation()]).fill(true);
        }
        if contacts {
            mask.slice_mut(s![.., layout.contacts()]).fill(true);
        }
        Ok(Self { known: reference.clone(), mask })
    }

    /// Upper-body joint angles given; legs, root and contacts generated.
    pub fn upper_body(reference: &Array2<f64>) -> Result<Self, DiffusionError> {
        Self::joints(reference, PoseLayout::smpl(), &SMPL_UPPER_BODY, false, false)
    }

    /// Lower-body joint angles, root trajectory and foot contacts given.
    pub fn lower_body(reference: &Array2<f64>) -> Result<Self, DiffusionError> {
        Self::joints(reference, PoseLayout::smpl(), &SMPL_LOWER_BODY, true, true)
    }

    pub fn known(&self) -> &Array2<f64> {
        &self.known
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn dim(&self) -> (usize, usize) {
        self.known.dim()
    }

    pub fn constrained_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.constrained_count() == 0
    }
}
