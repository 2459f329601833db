use ndarray::{Array2, Array3, ArrayView2};

use super::{rot6d_to_matrix, KinematicsError, Mat3, MotionClip, Skeleton};

/// Global (world) rotation of every joint at every frame, `[frame][joint]`.
pub fn global_rotations(skel: &Skeleton, clip: &MotionClip) -> Result<Vec<Vec<Mat3>>, KinematicsError> {
    check_layout(skel, clip)?;
    let mut out = Vec::with_capacity(clip.frames());
    for i in 0..clip.frames() {
        let mut frame: Vec<Mat3> = Vec::with_capacity(skel.joint_count());
        for j in 0..skel.joint_count() {
            let local = rot6d_to_matrix(&clip.rot6d(i, j)).map_err(|_| {
                KinematicsError::DegenerateRotation { frame: Some(i), joint: Some(j) }
            })?;
            let global = match skel.parent(j) {
                None => local,
                Some(p) => frame[p] * local,
            };
            frame.push(global);
        }
        out.push(frame);
    }
    Ok(out)
}

/// Joint positions, shape `N × J × 3`.
///
/// The root sits at the root translation; every other joint is its parent's
/// position plus the parent's global rotation applied to the rest offset.
pub fn forward_kinematics(skel: &Skeleton, clip: &MotionClip) -> Result<Array3<f64>, KinematicsError> {
    let rotations = global_rotations(skel, clip)?;
    let joints = skel.joint_count();
    let mut out = Array3::zeros((clip.frames(), joints, 3));
    for (i, frame) in rotations.iter().enumerate() {
        let mut pos = Vec::with_capacity(joints);
        for j in 0..joints {
            let p = match skel.parent(j) {
                None => clip.root_translation(i),
                Some(par) => pos[par] + frame[par] * skel.offset(j),
            };
            for k in 0..3 {
                out[[i, j, k]] = p[k];
            }
            pos.push(p);
        }
    }
    Ok(out)
}

/// Forward difference scaled to per-second units:
/// `out[i] = (values[i+1] − values[i]) · fps`.
pub fn finite_difference(values: ArrayView2<'_, f64>, fps: f64) -> Result<Array2<f64>, KinematicsError> {
    let n = values.nrows();
    if n < 2 {
        return Err(KinematicsError::TooShort { needed: 2, got: n });
    }
    let ahead = values.slice(ndarray::s![1.., ..]);
    let behind = values.slice(ndarray::s![..n - 1, ..]);
    Ok((&ahead - &behind) * fps)
}

fn check_layout(skel: &Skeleton, clip: &MotionClip) -> Result<(), KinematicsError> {
    if clip.layout().joints() != skel.joint_count() {
        return Err(KinematicsError::LayoutMismatch {
            expected: super::PoseLayout::new(skel.joint_count()).dim(),
            got: clip.layout().dim(),
        });
    }
    Ok(())
}
