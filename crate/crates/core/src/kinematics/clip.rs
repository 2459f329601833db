use std::ops::Range;

use ndarray::{s, Array2, ArrayView1, ArrayView2};

use super::{KinematicsError, Vec3};

pub const CONTACT_DIM: usize = 4;
/// `4 + 24·6 + 3`.
pub const SMPL_POSE_DIM: usize = 151;

/// Column layout of one pose frame for a skeleton with `joints` joints.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoseLayout {
    joints: usize,
}

impl PoseLayout {
    pub const fn new(joints: usize) -> Self {
        Self { joints }
    }

    pub const fn smpl() -> Self {
        Self::new(24)
    }

    /// Inverse of [`PoseLayout::dim`]; `None` if `dim` is not `7 + 6·J`.
    pub fn from_dim(dim: usize) -> Option<Self> {
        (dim >= 13 && (dim - 7).is_multiple_of(6)).then(|| Self::new((dim - 7) / 6))
    }

    pub const fn joints(&self) -> usize {
        self.joints
    }

    pub const fn dim(&self) -> usize {
        CONTACT_DIM + 6 * self.joints + 3
    }

    pub const fn contacts(&self) -> Range<usize> {
        0..CONTACT_DIM
    }

    pub const fn rotation(&self, joint: usize) -> Range<usize> {
        let start = CONTACT_DIM + 6 * joint;
        start..start + 6
    }

    pub const fn rotations(&self) -> Range<usize> {
        CONTACT_DIM..CONTACT_DIM + 6 * self.joints
    }

    pub const fn translation(&self) -> Range<usize> {
        let start = CONTACT_DIM + 6 * self.joints;
        start..start + 3
    }

    /// Layout string recorded in motion file headers, e.g. `b4|rot6d144|trans3`.
    pub fn tag(&self) -> String {
        format!("b{CONTACT_DIM}|rot6d{}|trans3", 6 * self.joints)
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        let mut parts = tag.split('|');
        let b = parts.next()?;
        let rot = parts.next()?.strip_prefix("rot6d")?.parse::<usize>().ok()?;
        let trans = parts.next()?;
        if b != "b4" || trans != "trans3" || parts.next().is_some() || rot % 6 != 0 || rot == 0 {
            return None;
        }
        Some(Self::new(rot / 6))
    }
}

/// `N` pose frames at a fixed frame rate, stored as an `N × dim` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionClip {
    data: Array2<f64>,
    fps: f64,
    layout: PoseLayout,
}

impl MotionClip {
    pub fn new(data: Array2<f64>, fps: f64, layout: PoseLayout) -> Result<Self, KinematicsError> {
        if data.ncols() != layout.dim() {
            return Err(KinematicsError::LayoutMismatch { expected: layout.dim(), got: data.ncols() });
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(KinematicsError::InvalidFps(fps));
        }
        Ok(Self { data, fps, layout })
    }

    /// Clip of `frames` identical rest poses (identity rotations, zero
    /// contacts) at the origin.
    pub fn rest(frames: usize, fps: f64, layout: PoseLayout) -> Result<Self, KinematicsError> {
        let mut data = Array2::zeros((frames, layout.dim()));
        for j in 0..layout.joints() {
            let r = layout.rotation(j);
            data.slice_mut(s![.., r.start]).fill(1.0);
            data.slice_mut(s![.., r.start + 4]).fill(1.0);
        }
        Self::new(data, fps, layout)
    }

    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn layout(&self) -> PoseLayout {
        self.layout
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn data_mut(&mut self) -> &mut Array2<f64> {
        &mut self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn frame(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn rot6d(&self, frame: usize, joint: usize) -> [f64; 6] {
        let r = self.layout.rotation(joint);
        let mut out = [0.0; 6];
        for (o, v) in out.iter_mut().zip(self.data.slice(s![frame, r])) {
            *o = *v;
        }
        out
    }

    pub fn set_rot6d(&mut self, frame: usize, joint: usize, r: &[f64; 6]) {
        let range = self.layout.rotation(joint);
        for (k, c) in range.enumerate() {
            self.data[[frame, c]] = r[k];
        }
    }

    pub fn root_translation(&self, frame: usize) -> Vec3 {
        let t = self.layout.translation().start;
        Vec3::new(self.data[[frame, t]], self.data[[frame, t + 1]], self.data[[frame, t + 2]])
    }

    pub fn set_root_translation(&mut self, frame: usize, p: Vec3) {
        let t = self.layout.translation().start;
        for k in 0..3 {
            self.data[[frame, t + k]] = p[k];
        }
    }

    pub fn contacts(&self) -> ArrayView2<'_, f64> {
        self.data.slice(s![.., 0..CONTACT_DIM])
    }

    pub fn set_contacts(&mut self, labels: &Array2<f64>) {
        self.data.slice_mut(s![.., 0..CONTACT_DIM]).assign(labels);
    }

    /// Clamps contact channels into `[0, 1]` (used when exporting model
    /// output).
    pub fn clamp_contacts(&mut self) {
        self.data.slice_mut(s![.., 0..CONTACT_DIM]).mapv_inplace(|v| v.clamp(0.0, 1.0));
    }

    /// Frames `start..start + len` as a new clip.
    pub fn slice(&self, start: usize, len: usize) -> MotionClip {
        MotionClip {
            data: self.data.slice(s![start..start + len, ..]).to_owned(),
            fps: self.fps,
            layout: self.layout,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smpl_layout_is_151() {
        let l = PoseLayout::smpl();
        assert_eq!(l.dim(), SMPL_POSE_DIM);
        assert_eq!(l.rotation(0), 4..10);
        assert_eq!(l.rotation(23), 142..148);
        assert_eq!(l.translation(), 148..151);
        assert_eq!(l.tag(), "b4|rot6d144|trans3");
        assert_eq!(PoseLayout::from_tag("b4|rot6d144|trans3"), Some(l));
        assert_eq!(PoseLayout::from_tag("b4|rot6d145|trans3"), None);
        assert_eq!(PoseLayout::from_dim(151), Some(l));
        assert_eq!(PoseLayout::from_dim(150), None);
    }

    #[test]
    fn constructor_validates() {
        let l = PoseLayout::new(3);
        assert!(MotionClip::new(Array2::zeros((4, 20)), 30.0, l).is_err());
        assert!(MotionClip::new(Array2::zeros((4, 25)), 0.0, l).is_err());
        let rest = MotionClip::rest(2, 30.0, l).unwrap();
        assert_eq!(rest.rot6d(1, 2), [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }
}
