use nalgebra::Vector3;
use ndarray::ArrayView3;

use super::MetricsError;
use crate::kinematics::{forward_kinematics, MotionClip, Skeleton};

/// Per joint, the mean over frames of squared speed (m²/s²), from forward
/// differences.
pub fn kinetic_features_from_positions(pos: ArrayView3<'_, f64>, fps: f64) -> Result<Vec<f64>, MetricsError> {
    let (n, joints, _) = pos.dim();
    if n < 2 {
        return Err(MetricsError::TooShort { needed: 2, got: n });
    }
    Ok((0..joints)
        .map(|j| {
            (0..n - 1)
                .map(|i| (0..3).map(|k| ((pos[[i + 1, j, k]] - pos[[i, j, k]]) * fps).powi(2)).sum::<f64>())
                .sum::<f64>()
                / (n - 1) as f64
        })
        .collect())
}

pub fn kinetic_features(clip: &MotionClip, skel: &Skeleton) -> Result<Vec<f64>, MetricsError> {
    let pos = forward_kinematics(skel, clip)?;
    kinetic_features_from_positions(pos.view(), clip.fps())
}

/// Version tag of the geometric predicate list; bump when it changes.
pub const GEOMETRIC_VERSION: &str = "v1";

/// Names of the boolean relational predicates, in feature order.
///
/// Directions use a per-frame body frame: `lateral` points from the right
/// hip to the left hip projected on the ground plane, `up` is +z and
/// `forward = lateral × up`. `w` is the hip width. The ground is the lowest
/// foot-joint height over the clip.
pub const GEOMETRIC_PREDICATES: [&str; 16] = [
    "left ankle ahead of right ankle by more than 0.1 m",
    "right ankle ahead of left ankle by more than 0.1 m",
    "ankles apart sideways by more than 1.5 w",
    "left foot (heel and toe) more than 0.1 m above ground",
    "right foot (heel and toe) more than 0.1 m above ground",
    "left wrist above head",
    "right wrist above head",
    "left wrist more than 0.3 m ahead of pelvis",
    "right wrist more than 0.3 m ahead of pelvis",
    "wrists more than 1.2 m apart",
    "left knee bent below 150 degrees",
    "right knee bent below 150 degrees",
    "left elbow bent below 120 degrees",
    "right elbow bent below 120 degrees",
    "pelvis less than 0.7 m above ground",
    "torso leaning more than 30 degrees from vertical",
];

struct Joints {
    pelvis: usize,
    l_hip: usize,
    r_hip: usize,
    l_knee: usize,
    r_knee: usize,
    l_ankle: usize,
    r_ankle: usize,
    l_toe: usize,
    r_toe: usize,
    neck: usize,
    head: usize,
    l_shoulder: usize,
    r_shoulder: usize,
    l_elbow: usize,
    r_elbow: usize,
    l_wrist: usize,
    r_wrist: usize,
}

impl Joints {
    fn find(skel: &Skeleton) -> Result<Self, MetricsError> {
        let j = |name: &'static str| skel.index_of(name).ok_or(MetricsError::MissingJoint(name));
        Ok(Self {
            pelvis: j("pelvis")?,
            l_hip: j("left_hip")?,
            r_hip: j("right_hip")?,
            l_knee: j("left_knee")?,
            r_knee: j("right_knee")?,
            l_ankle: j("left_ankle")?,
            r_ankle: j("right_ankle")?,
            l_toe: j("left_foot")?,
            r_toe: j("right_foot")?,
            neck: j("neck")?,
            head: j("head")?,
            l_shoulder: j("left_shoulder")?,
            r_shoulder: j("right_shoulder")?,
            l_elbow: j("left_elbow")?,
            r_elbow: j("right_elbow")?,
            l_wrist: j("left_wrist")?,
            r_wrist: j("right_wrist")?,
        })
    }
}

fn angle_deg(a: Vector3<f64>, b: Vector3<f64>) -> f64 {
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        return 180.0;
    }
    (a.dot(&b) / denom).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Fraction of frames on which each of [`GEOMETRIC_PREDICATES`] holds.
/// Requires the SMPL joint names.
pub fn geometric_features_from_positions(pos: ArrayView3<'_, f64>, skel: &Skeleton) -> Result<Vec<f64>, MetricsError> {
    let (n, joints, _) = pos.dim();
    if joints != skel.joint_count() {
        return Err(MetricsError::JointCountMismatch { expected: skel.joint_count(), got: joints });
    }
    if n == 0 {
        return Err(MetricsError::TooShort { needed: 1, got: 0 });
    }
    let ix = Joints::find(skel)?;
    let p = |i: usize, j: usize| Vector3::new(pos[[i, j, 0]], pos[[i, j, 1]], pos[[i, j, 2]]);
    let ground = (0..n)
        .flat_map(|i| skel.feet().map(|f| pos[[i, f, 2]]))
        .fold(f64::INFINITY, f64::min);
    let up = Vector3::z();
    let mut counts = [0usize; 16];
    for i in 0..n {
        let hips = p(i, ix.l_hip) - p(i, ix.r_hip);
        let w = hips.norm();
        let lateral = Vector3::new(hips.x, hips.y, 0.0).try_normalize(1e-12).unwrap_or_else(Vector3::x);
        let forward = lateral.cross(&up);
        let pelvis = p(i, ix.pelvis);
        let ahead = |j: usize| (p(i, j) - pelvis).dot(&forward);
        let height = |j: usize| p(i, j).z - ground;
        let bend = |a: usize, b: usize, c: usize| angle_deg(p(i, a) - p(i, b), p(i, c) - p(i, b));
        let feet_gap = (p(i, ix.l_ankle) - p(i, ix.r_ankle)).dot(&lateral).abs();
        let truths = [
            ahead(ix.l_ankle) - ahead(ix.r_ankle) > 0.1,
            ahead(ix.r_ankle) - ahead(ix.l_ankle) > 0.1,
            feet_gap > 1.5 * w,
            height(ix.l_ankle).min(height(ix.l_toe)) > 0.1,
            height(ix.r_ankle).min(height(ix.r_toe)) > 0.1,
            p(i, ix.l_wrist).z > p(i, ix.head).z,
            p(i, ix.r_wrist).z > p(i, ix.head).z,
            ahead(ix.l_wrist) > 0.3,
            ahead(ix.r_wrist) > 0.3,
            (p(i, ix.l_wrist) - p(i, ix.r_wrist)).norm() > 1.2,
            bend(ix.l_hip, ix.l_knee, ix.l_ankle) < 150.0,
            bend(ix.r_hip, ix.r_knee, ix.r_ankle) < 150.0,
            bend(ix.l_shoulder, ix.l_elbow, ix.l_wrist) < 120.0,
            bend(ix.r_shoulder, ix.r_elbow, ix.r_wrist) < 120.0,
            height(ix.pelvis) < 0.7,
            angle_deg(p(i, ix.neck) - pelvis, up) > 30.0,
        ];
        for (c, t) in counts.iter_mut().zip(truths) {
            *c += t as usize;
        }
    }
    Ok(counts.iter().map(|&c| c as f64 / n as f64).collect())
}

pub fn geometric_features(clip: &MotionClip, skel: &Skeleton) -> Result<Vec<f64>, MetricsError> {
    let pos = forward_kinematics(skel, clip)?;
    geometric_features_from_positions(pos.view(), skel)
}

/// Largest relative bone-length range over the sequence:
/// `max over bones of (max len − min len) / mean len`.
pub fn bone_length_drift(pos: ArrayView3<'_, f64>, skel: &Skeleton) -> Result<f64, MetricsError> {
    let (n, joints, _) = pos.dim();
    if joints != skel.joint_count() {
        return Err(MetricsError::JointCountMismatch { expected: skel.joint_count(), got: joints });
    }
    if n == 0 {
        return Err(MetricsError::TooShort { needed: 1, got: 0 });
    }
    let mut worst: f64 = 0.0;
    for j in 0..joints {
        let Some(parent) = skel.parent(j) else { continue };
        let lengths: Vec<f64> = (0..n)
            .map(|i| (0..3).map(|k| (pos[[i, j, k]] - pos[[i, parent, k]]).powi(2)).sum::<f64>().sqrt())
            .collect();
        let mean = lengths.iter().sum::<f64>() / n as f64;
        if mean <= 1e-12 {
            return Err(MetricsError::ZeroLengthBone(format!("{}-{}", skel.name(parent), skel.name(j))));
        }
        let (lo, hi) = lengths.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &l| (lo.min(l), hi.max(l)));
        worst = worst.max((hi - lo) / mean);
    }
    Ok(worst)
}
