//! Training objective: reconstruction, joint-position, velocity and
//! contact-consistency terms. Each term exists as a tape builder (for
//! training) and as a plain function (for evaluation and tests).

use ndarray::{s, Array2};

use super::{LossWeights, ModelError};
use crate::kinematics::tape_fk::joint_positions;
use crate::kinematics::{forward_kinematics, MotionClip, PoseLayout, Skeleton};
use crate::tape::{Tape, Var};

fn check_same(x: (usize, usize), xhat: (usize, usize)) -> Result<(), ModelError> {
    if x != xhat {
        return Err(ModelError::ShapeMismatch { what: "prediction", expected: x, got: xhat });
    }
    Ok(())
}

fn check_layout(skel: &Skeleton, shape: (usize, usize)) -> Result<PoseLayout, ModelError> {
    let layout = PoseLayout::new(skel.joint_count());
    if shape.1 != layout.dim() {
        return Err(ModelError::ShapeMismatch { what: "pose layout", expected: (shape.0, layout.dim()), got: shape });
    }
    Ok(layout)
}

fn check_len(n: usize) -> Result<(), ModelError> {
    if n < 2 {
        return Err(ModelError::TooShort { needed: 2, got: n });
    }
    Ok(())
}

/// Mean squared error over all entries.
pub fn tape_loss_simple(tape: &mut Tape, x: &Array2<f64>, xhat: Var) -> Result<Var, ModelError> {
    check_same(x.dim(), tape.shape(xhat))?;
    let xv = tape.leaf(x.clone());
    let d = tape.sub(xhat, xv);
    let sq = tape.square(d);
    Ok(tape.mean(sq))
}

/// `(1/N) Σ_i ‖FK(x_i) − FK(x̂_i)‖²` over every joint coordinate.
pub fn tape_loss_joint(tape: &mut Tape, skel: &Skeleton, x: &Array2<f64>, xhat: Var) -> Result<Var, ModelError> {
    check_same(x.dim(), tape.shape(xhat))?;
    check_layout(skel, x.dim())?;
    let n = x.nrows();
    let joints: Vec<usize> = (0..skel.joint_count()).collect();
    let xv = tape.leaf(x.clone());
    let target = joint_positions(tape, skel, xv, &joints);
    let pred = joint_positions(tape, skel, xhat, &joints);
    let mut total = None;
    for (p, q) in pred.into_iter().zip(target) {
        let d = tape.sub(p, q);
        let sq = tape.square(d);
        let s = tape.sum(sq);
        total = Some(match total {
            Some(acc) => tape.add(acc, s),
            None => s,
        });
    }
    Ok(tape.scale(total.expect("skeleton has joints"), 1.0 / n as f64))
}

/// `(1/(N−1)) Σ_i ‖(x_{i+1} − x_i) − (x̂_{i+1} − x̂_i)‖²` on the raw pose vectors.
pub fn tape_loss_vel(tape: &mut Tape, x: &Array2<f64>, xhat: Var) -> Result<Var, ModelError> {
    check_same(x.dim(), tape.shape(xhat))?;
    let n = x.nrows();
    check_len(n)?;
    let dx = &x.slice(s![1.., ..]) - &x.slice(s![..n - 1, ..]);
    let dxv = tape.leaf(dx);
    let next = tape.slice_rows(xhat, 1, n - 1);
    let prev = tape.slice_rows(xhat, 0, n - 1);
    let dh = tape.sub(next, prev);
    let d = tape.sub(dh, dxv);
    let sq = tape.square(d);
    let s = tape.sum(sq);
    Ok(tape.scale(s, 1.0 / (n - 1) as f64))
}

/// `(1/(N−1)) Σ_i Σ_f ‖(p_f(x̂_{i+1}) − p_f(x̂_i)) · b̂_{i,f}‖²` where `p_f` is
/// the position of foot joint `f` and `b̂` the predicted contact channels.
/// Differentiable in both the motion and the contacts.
pub fn tape_loss_contact(tape: &mut Tape, skel: &Skeleton, xhat: Var) -> Result<Var, ModelError> {
    let shape = tape.shape(xhat);
    let layout = check_layout(skel, shape)?;
    let n = shape.0;
    check_len(n)?;
    let feet = skel.feet();
    let positions = joint_positions(tape, skel, xhat, &feet);
    let mut total = None;
    for (k, p) in positions.into_iter().enumerate() {
        let next = tape.slice_rows(p, 1, n - 1);
        let prev = tape.slice_rows(p, 0, n - 1);
        let disp = tape.sub(next, prev);
        let b = tape.slice_cols(xhat, layout.contacts().start + k, 1);
        let b = tape.slice_rows(b, 0, n - 1);
        let scaled = tape.mul_col(disp, b);
        let sq = tape.square(scaled);
        let s = tape.sum(sq);
        total = Some(match total {
            Some(acc) => tape.add(acc, s),
            None => s,
        });
    }
    Ok(tape.scale(total.expect("four feet"), 1.0 / (n - 1) as f64))
}

/// Per-term values of the weighted objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub simple: f64,
    pub joint: f64,
    pub vel: f64,
    pub contact: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.simple, self.joint, self.vel, self.contact, self.total].iter().all(|v| v.is_finite())
    }
}

/// `L_simple + λ_pos·L_joint + λ_vel·L_vel + λ_contact·L_contact`; returns
/// the total node and the term values.
pub fn tape_total_loss(
    tape: &mut Tape,
    skel: &Skeleton,
    x: &Array2<f64>,
    xhat: Var,
    w: &LossWeights,
) -> Result<(Var, LossBreakdown), ModelError> {
    let simple = tape_loss_simple(tape, x, xhat)?;
    let joint = tape_loss_joint(tape, skel, x, xhat)?;
    let vel = tape_loss_vel(tape, x, xhat)?;
    let contact = tape_loss_contact(tape, skel, xhat)?;
    let mut total = simple;
    for (term, weight) in [(joint, w.pos), (vel, w.vel), (contact, w.contact)] {
        if weight != 0.0 {
            let t = tape.scale(term, weight);
            total = tape.add(total, t);
        }
    }
    let breakdown = LossBreakdown {
        simple: tape.scalar(simple),
        joint: tape.scalar(joint),
        vel: tape.scalar(vel),
        contact: tape.scalar(contact),
        total: tape.scalar(total),
    };
    Ok((total, breakdown))
}

fn eval(xhat: &Array2<f64>, build: impl FnOnce(&mut Tape, Var) -> Result<Var, ModelError>) -> Result<f64, ModelError> {
    let mut tape = Tape::new();
    let v = tape.leaf(xhat.clone());
    let out = build(&mut tape, v)?;
    Ok(tape.scalar(out))
}

/// Rejects clips whose rotations cannot be orthonormalized.
fn check_fk(skel: &Skeleton, x: &Array2<f64>) -> Result<(), ModelError> {
    let layout = check_layout(skel, x.dim())?;
    let clip = MotionClip::new(x.clone(), 30.0, layout)?;
    forward_kinematics(skel, &clip)?;
    Ok(())
}

pub fn loss_simple(x: &Array2<f64>, xhat: &Array2<f64>) -> Result<f64, ModelError> {
    eval(xhat, |t, v| tape_loss_simple(t, x, v))
}

pub fn loss_joint(x: &Array2<f64>, xhat: &Array2<f64>, skel: &Skeleton) -> Result<f64, ModelError> {
    check_same(x.dim(), xhat.dim())?;
    check_fk(skel, x)?;
    check_fk(skel, xhat)?;
    eval(xhat, |t, v| tape_loss_joint(t, skel, x, v))
}

pub fn loss_vel(x: &Array2<f64>, xhat: &Array2<f64>) -> Result<f64, ModelError> {
    eval(xhat, |t, v| tape_loss_vel(t, x, v))
}

pub fn loss_contact(xhat: &Array2<f64>, skel: &Skeleton) -> Result<f64, ModelError> {
    check_len(xhat.nrows())?;
    check_fk(skel, xhat)?;
    eval(xhat, |t, v| tape_loss_contact(t, skel, v))
}

pub fn total_loss(
    x: &Array2<f64>,
    xhat: &Array2<f64>,
    skel: &Skeleton,
    w: &LossWeights,
) -> Result<LossBreakdown, ModelError> {
    check_same(x.dim(), xhat.dim())?;
    check_fk(skel, x)?;
    check_fk(skel, xhat)?;
    let mut tape = Tape::new();
    let v = tape.leaf(xhat.clone());
    Ok(tape_total_loss(&mut tape, skel, x, v, w)?.1)
}
