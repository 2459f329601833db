use nalgebra::{Matrix3, Vector3};

use super::KinematicsError;

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;

const DEGENERATE_NORM: f64 = 1e-8;
const ROTATION_TOL: f64 = 1e-4;

/// Maps a 6-DOF rotation (first two matrix columns, concatenated) to a
/// rotation matrix by Gram–Schmidt: normalize the first column,
/// orthogonalize the second against it, complete with the cross product.
pub fn rot6d_to_matrix(r: &[f64; 6]) -> Result<Mat3, KinematicsError> {
    let degenerate = || KinematicsError::DegenerateRotation { frame: None, joint: None };
    let a1 = Vec3::new(r[0], r[1], r[2]);
    let a2 = Vec3::new(r[3], r[4], r[5]);
    let (n1, n2) = (a1.norm(), a2.norm());
    if !(n1 >= DEGENERATE_NORM && n2 >= DEGENERATE_NORM) {
        return Err(degenerate());
    }
    let b1 = a1 / n1;
    let u = a2 - b1 * b1.dot(&a2);
    let nu = u.norm();
    if nu.is_nan() || nu < DEGENERATE_NORM {
        return Err(degenerate());
    }
    let b2 = u / nu;
    let b3 = b1.cross(&b2);
    Ok(Mat3::from_columns(&[b1, b2, b3]))
}

/// First two columns of `m`. Rejects matrices that are not rotations
/// within `1e-4`.
pub fn matrix_to_rot6d(m: &Mat3) -> Result<[f64; 6], KinematicsError> {
    let orthogonality = (m.transpose() * m - Mat3::identity()).amax();
    let det = m.determinant();
    if !(orthogonality <= ROTATION_TOL && (det - 1.0).abs() <= ROTATION_TOL) {
        return Err(KinematicsError::NotARotation { orthogonality, det });
    }
    Ok([m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]])
}
