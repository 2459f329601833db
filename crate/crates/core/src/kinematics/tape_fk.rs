//! Forward kinematics expressed as tape operations, so losses defined on
//! joint positions can be differentiated with respect to the pose values.
//!
//! Rotations are kept as three `N × 3` column blocks (column `k` of the
//! rotation matrix at every frame), which lets one tape node cover all frames.

use crate::tape::{Tape, Var};

use super::{PoseLayout, Skeleton};

/// Added under the square roots of the Gram–Schmidt norms so that
/// near-degenerate predictions stay differentiable.
const NORM_EPS: f64 = 1e-12;

fn row_norm(tape: &mut Tape, v: Var) -> Var {
    let sq = tape.square(v);
    let s = tape.sum_cols(sq);
    let s = tape.add_scalar(s, NORM_EPS);
    tape.sqrt(s)
}

/// Rotation-matrix columns `[b1, b2, b3]` for the 6-DOF block starting at
/// column `start` of `x` (`N × dim`).
pub fn rot6d_columns(tape: &mut Tape, x: Var, start: usize) -> [Var; 3] {
    let a1 = tape.slice_cols(x, start, 3);
    let a2 = tape.slice_cols(x, start + 3, 3);
    let n1 = row_norm(tape, a1);
    let b1 = tape.div_col(a1, n1);
    let prod = tape.mul(b1, a2);
    let d = tape.sum_cols(prod);
    let proj = tape.mul_col(b1, d);
    let u = tape.sub(a2, proj);
    let n2 = row_norm(tape, u);
    let b2 = tape.div_col(u, n2);
    let b3 = tape.cross(b1, b2);
    [b1, b2, b3]
}

/// `N × 3` world positions for each requested joint (in request order).
/// Only the ancestors of the requested joints are evaluated.
pub fn joint_positions(tape: &mut Tape, skel: &Skeleton, x: Var, joints: &[usize]) -> Vec<Var> {
    let layout = PoseLayout::new(skel.joint_count());
    let needed = skel.ancestors_of(joints);
    let j_count = skel.joint_count();
    let mut global: Vec<Option<[Var; 3]>> = vec![None; j_count];
    let mut pos: Vec<Option<Var>> = vec![None; j_count];

    for &j in &needed {
        let local = rot6d_columns(tape, x, layout.rotation(j).start);
        match skel.parent(j) {
            None => {
                global[j] = Some(local);
                pos[j] = Some(tape.slice_cols(x, layout.translation().start, 3));
            }
            Some(p) => {
                let gp = global[p].expect("ancestors are evaluated first");
                // column k of G_p · L_j = Σ_m G_p[:, m] · L_j[m, k]
                let mut cols = [gp[0]; 3];
                for (k, col) in cols.iter_mut().enumerate() {
                    let mut acc = None;
                    for (m, &gcol) in gp.iter().enumerate() {
                        let coef = tape.slice_cols(local[k], m, 1);
                        let term = tape.mul_col(gcol, coef);
                        acc = Some(match acc {
                            None => term,
                            Some(a) => tape.add(a, term),
                        });
                    }
                    *col = acc.expect("three terms");
                }
                global[j] = Some(cols);

                let off = skel.offset(j);
                let mut p_j = pos[p].expect("ancestors are evaluated first");
                for (m, &gcol) in gp.iter().enumerate() {
                    if off[m] != 0.0 {
                        let term = tape.scale(gcol, off[m]);
                        p_j = tape.add(p_j, term);
                    }
                }
                pos[j] = Some(p_j);
            }
        }
    }
    joints.iter().map(|&j| pos[j].expect("requested joint evaluated")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{forward_kinematics, MotionClip};
    use crate::rng::{standard_normal, SeedStream};

    #[test]
    fn matches_plain_forward_kinematics() {
        let skel = Skeleton::smpl();
        let layout = PoseLayout::smpl();
        let mut rng = SeedStream::new(7).rng(0);
        let mut data = standard_normal(&mut rng, 5, layout.dim());
        // Keep rotations comfortably away from degeneracy.
        for j in 0..24 {
            let r = layout.rotation(j);
            for i in 0..5 {
                data[[i, r.start]] += 2.0;
                data[[i, r.start + 4]] += 2.0;
            }
        }
        let clip = MotionClip::new(data.clone(), 30.0, layout).unwrap();
        let plain = forward_kinematics(&skel, &clip).unwrap();

        let mut tape = Tape::new();
        let x = tape.leaf(data);
        let all: Vec<usize> = (0..24).collect();
        let vars = joint_positions(&mut tape, &skel, x, &all);
        for (j, v) in vars.iter().enumerate() {
            let p = tape.value(*v);
            for i in 0..5 {
                for k in 0..3 {
                    assert!((p[[i, k]] - plain[[i, j, k]]).abs() < 1e-9);
                }
            }
        }
    }
}
