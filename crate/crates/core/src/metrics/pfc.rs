use ndarray::ArrayView3;

use super::MetricsError;
use crate::kinematics::{forward_kinematics, MotionClip, Skeleton};

/// Below this peak clamped root acceleration (m/s²) a clip counts as static.
const DEGENERATE_ACCEL: f64 = 1e-9;

/// How a foot's heel and toe speeds combine into one foot speed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FootReduction {
    #[default]
    Mean,
    Min,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PfcOptions {
    pub foot_reduction: FootReduction,
    /// Ignore the vertical component of foot velocity.
    pub horizontal_foot_speed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pfc {
    pub value: f64,
    /// Set when the clip has no positive-normalizer acceleration; `value` is
    /// then 0.
    pub degenerate: bool,
}

/// Physical foot contact score of joint positions `N × J × 3` (z-up).
///
/// For interior frames `i`, the root acceleration `a` is the second central
/// difference (m/s²) with its vertical part clamped at 0, and each foot
/// speed is the forward difference `i → i+1` (m/s) of its heel and toe,
/// reduced per `opts`. With `s_i = ‖a_i‖·v_left·v_right`, the score is
/// `Σ s_i / (N · max_j ‖a_j‖)`.
pub fn pfc_from_positions(
    pos: ArrayView3<'_, f64>,
    fps: f64,
    feet: [usize; 4],
    opts: PfcOptions,
) -> Result<Pfc, MetricsError> {
    let (n, joints, _) = pos.dim();
    if n < 3 {
        return Err(MetricsError::TooShort { needed: 3, got: n });
    }
    if let Some(&f) = feet.iter().find(|&&f| f >= joints) {
        return Err(MetricsError::JointCountMismatch { expected: f + 1, got: joints });
    }
    let speed = |i: usize, j: usize| {
        let dims = if opts.horizontal_foot_speed { 2 } else { 3 };
        (0..dims).map(|k| (pos[[i + 1, j, k]] - pos[[i, j, k]]).powi(2)).sum::<f64>().sqrt() * fps
    };
    let foot = |i: usize, heel: usize, toe: usize| {
        let (a, b) = (speed(i, heel), speed(i, toe));
        match opts.foot_reduction {
            FootReduction::Mean => 0.5 * (a + b),
            FootReduction::Min => a.min(b),
        }
    };
    let mut sum = 0.0;
    let mut max_accel: f64 = 0.0;
    for i in 1..n - 1 {
        let mut a = [0.0; 3];
        for (k, ak) in a.iter_mut().enumerate() {
            *ak = (pos[[i + 1, 0, k]] - 2.0 * pos[[i, 0, k]] + pos[[i - 1, 0, k]]) * fps * fps;
        }
        a[2] = a[2].max(0.0);
        let accel = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
        max_accel = max_accel.max(accel);
        sum += accel * foot(i, feet[0], feet[1]) * foot(i, feet[2], feet[3]);
    }
    if max_accel < DEGENERATE_ACCEL {
        return Ok(Pfc { value: 0.0, degenerate: true });
    }
    Ok(Pfc { value: sum / (n as f64 * max_accel), degenerate: false })
}

/// [`pfc_from_positions`] on the forward kinematics of `clip`.
pub fn pfc(clip: &MotionClip, skel: &Skeleton, opts: PfcOptions) -> Result<Pfc, MetricsError> {
    let pos = forward_kinematics(skel, clip)?;
    pfc_from_positions(pos.view(), clip.fps(), skel.feet(), opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::PoseLayout;
    use ndarray::Array3;
    use proptest::prelude::*;

    const FEET: [usize; 4] = [1, 2, 3, 4];

    /// Root path plus four foot joints that each translate by `step` per frame.
    fn body(root: &[[f64; 3]], step: [f64; 3]) -> Array3<f64> {
        let n = root.len();
        Array3::from_shape_fn((n, 5, 3), |(i, j, k)| if j == 0 { root[i][k] } else { j as f64 + i as f64 * step[k] })
    }

    #[test]
    fn hand_arithmetic_case() {
        let fps = 30.0;
        let root = [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
        let pos = body(&root, [0.0, 1.0 / fps, 0.0]);
        // Frame 1: a = (1 − 0 + 0)·fps²; frame 2: a = (3 − 2 + 0)·fps². Both
        // feet move at 1 m/s, so s = fps² on both frames and the maximum is
        // fps²: PFC = 2·fps² / (4·fps²).
        let s1 = 1.0 * fps * fps * 1.0 * 1.0;
        let s2 = 1.0 * fps * fps * 1.0 * 1.0;
        let expected = (s1 + s2) / (4.0 * fps * fps);
        let got = pfc_from_positions(pos.view(), fps, FEET, PfcOptions::default()).unwrap();
        assert!((got.value - expected).abs() < 1e-9, "{got:?}");
        assert!((got.value - 0.5).abs() < 1e-12);
        assert!(!got.degenerate);
    }

    #[test]
    fn static_clip_is_degenerate_zero() {
        let clip = MotionClip::rest(10, 30.0, PoseLayout::smpl()).unwrap();
        let p = pfc(&clip, &Skeleton::smpl(), PfcOptions::default()).unwrap();
        assert_eq!(p, Pfc { value: 0.0, degenerate: true });
    }

    #[test]
    fn pinned_feet_score_zero() {
        let root: Vec<[f64; 3]> = (0..8).map(|i| [0.01 * (i * i) as f64, 0.0, 0.0]).collect();
        let pos = body(&root, [0.0; 3]);
        let p = pfc_from_positions(pos.view(), 30.0, FEET, PfcOptions::default()).unwrap();
        assert_eq!(p.value, 0.0);
        assert!(!p.degenerate);
    }

    #[test]
    fn downward_acceleration_is_ignored() {
        // Pure free fall: vertical acceleration is negative, clamped to zero.
        let root: Vec<[f64; 3]> = (0..6).map(|i| [0.0, 0.0, -0.01 * (i * i) as f64]).collect();
        let pos = body(&root, [0.1, 0.0, 0.0]);
        assert!(pfc_from_positions(pos.view(), 30.0, FEET, PfcOptions::default()).unwrap().degenerate);
    }

    #[test]
    fn reductions_and_horizontal_switch() {
        let fps = 10.0;
        let root = [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let mut pos = body(&root, [0.0; 3]);
        // Heels move 0.3 m/frame horizontally, toes 0.4 m/frame vertically.
        for j in [1, 3] {
            pos[[2, j, 0]] += 0.03;
        }
        for j in [2, 4] {
            pos[[2, j, 2]] += 0.04;
        }
        let opts = |foot_reduction, horizontal_foot_speed| PfcOptions { foot_reduction, horizontal_foot_speed };
        let run = |o| pfc_from_positions(pos.view(), fps, FEET, o).unwrap().value;
        assert!((run(opts(FootReduction::Mean, false)) - 0.35 * 0.35 / 3.0).abs() < 1e-12);
        assert!((run(opts(FootReduction::Min, false)) - 0.3 * 0.3 / 3.0).abs() < 1e-12);
        assert!((run(opts(FootReduction::Mean, true)) - 0.15 * 0.15 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn too_short() {
        let pos = Array3::zeros((2, 5, 3));
        assert!(matches!(
            pfc_from_positions(pos.view(), 30.0, FEET, PfcOptions::default()),
            Err(MetricsError::TooShort { needed: 3, got: 2 })
        ));
    }

    proptest! {
        #[test]
        fn translation_and_yaw_invariant(
            seed in 0u64..1000,
            shift in prop::array::uniform3(-5.0f64..5.0),
            yaw in -3.1f64..3.1,
        ) {
            use rand::{Rng as _, SeedableRng};
            let mut rng = crate::rng::Rng::seed_from_u64(seed);
            let pos = Array3::from_shape_simple_fn((12, 5, 3), || rng.random_range(-0.3..0.3));
            let (c, s) = (yaw.cos(), yaw.sin());
            let moved = Array3::from_shape_fn((12, 5, 3), |(i, j, k)| {
                let (x, y, z) = (pos[[i, j, 0]], pos[[i, j, 1]], pos[[i, j, 2]]);
                [c * x - s * y, s * x + c * y, z][k] + shift[k]
            });
            let a = pfc_from_positions(pos.view(), 30.0, FEET, PfcOptions::default()).unwrap();
            let b = pfc_from_positions(moved.view(), 30.0, FEET, PfcOptions::default()).unwrap();
            prop_assert!((a.value - b.value).abs() <= 1e-9 * a.value.max(1.0));
            prop_assert!(a.value >= 0.0);
        }
    }
}
