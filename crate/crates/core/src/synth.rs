//! Procedural beat-locked dance clips with matching click tracks, for
//! dataset-free training and testing.
//!
//! Feet alternate roles every beat: the stance foot stays planted while the
//! swing foot steps to a new spot and lands before the next beat. Legs are
//! posed by two-bone inverse kinematics so planted feet do not slide; spine,
//! arms and head follow sinusoids locked to the beat.

use std::f64::consts::PI;

use nalgebra::{Rotation3, Unit};
use rand::Rng as _;

use crate::audio::AudioBuffer;
use crate::kinematics::{
    extract_contact_labels, matrix_to_rot6d, ContactThresholds, KinematicsError, Mat3, MotionClip, PoseLayout, Skeleton,
    Vec3,
};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    pub frames: usize,
    pub fps: f64,
    /// Tempo range, sampled uniformly per clip.
    pub bpm: (f64, f64),
    pub sample_rate: u32,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self { frames: 150, fps: 30.0, bpm: (90.0, 150.0), sample_rate: 22050 }
    }
}

#[derive(Clone, Debug)]
pub struct SynthClip {
    /// Pose data with contact labels from [`extract_contact_labels`].
    pub motion: MotionClip,
    pub audio: AudioBuffer,
    pub bpm: f64,
    /// Click times in seconds; motion beats land on them.
    pub beat_times: Vec<f64>,
}

/// Fraction of each beat spent swinging; the rest is double support.
const SWING: f64 = 0.6;
const LIFT: f64 = 0.08;
const PELVIS_HEIGHT: f64 = 0.80;
const BOUNCE: f64 = 0.03;

/// Decaying 1 kHz bursts of 10 ms at `times`, `seconds` long.
pub fn click_track(times: &[f64], seconds: f64, sample_rate: u32) -> AudioBuffer {
    let sr = sample_rate as f64;
    let mut x = vec![0.0; (seconds * sr).round() as usize];
    for &t in times {
        let start = (t * sr).round() as usize;
        for i in 0..(0.01 * sr) as usize {
            if let Some(s) = x.get_mut(start + i) {
                let u = i as f64 / sr;
                *s += 0.9 * (-u / 0.003).exp() * (2.0 * PI * 1000.0 * u).sin();
            }
        }
    }
    for s in &mut x {
        *s = s.clamp(-1.0, 1.0);
    }
    AudioBuffer::new(x, sample_rate).expect("bounded finite samples")
}

struct Leg {
    hip: usize,
    knee: usize,
    ankle: usize,
    toe: usize,
}

fn joint(skel: &Skeleton, name: &str) -> Result<usize, KinematicsError> {
    skel.index_of(name).ok_or_else(|| KinematicsError::InvalidSkeleton(format!("synthesis needs joint {name}")))
}

fn leg(skel: &Skeleton, side: &str) -> Result<Leg, KinematicsError> {
    Ok(Leg {
        hip: joint(skel, &format!("{side}_hip"))?,
        knee: joint(skel, &format!("{side}_knee"))?,
        ankle: joint(skel, &format!("{side}_ankle"))?,
        toe: joint(skel, &format!("{side}_foot"))?,
    })
}

fn rot_x(a: f64) -> Mat3 {
    Rotation3::from_axis_angle(&Vec3::x_axis(), a).into()
}

fn rot_z(a: f64) -> Mat3 {
    Rotation3::from_axis_angle(&Vec3::z_axis(), a).into()
}

/// Pitch that brings the toe level with the ankle.
fn level_foot_pitch(toe_offset: Vec3) -> f64 {
    (-toe_offset.z).atan2(toe_offset.y)
}

/// Local hip and knee rotations placing the ankle at `target` (world),
/// given the hip's world position and its parent's world rotation. The knee
/// flexes about its x axis; the hip applies the minimal rotation onto the
/// target direction. Out-of-reach targets straighten the leg.
fn two_bone_ik(skel: &Skeleton, leg: &Leg, hip_pos: Vec3, parent_rot: &Mat3, target: Vec3) -> (Mat3, Mat3) {
    let upper = skel.offset(leg.knee);
    let lower = skel.offset(leg.ankle);
    let u = parent_rot.transpose() * (target - hip_pos);
    let d = u.norm();
    let reach = |theta: f64| (upper + rot_x(theta) * lower).norm();
    let (mut lo, mut hi) = (0.0, PI * 0.95);
    let theta = if d >= reach(lo) {
        0.0
    } else if d <= reach(hi) {
        hi
    } else {
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if reach(mid) > d {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let knee = rot_x(theta);
    let v = upper + knee * lower;
    let hip: Mat3 = Rotation3::rotation_between(&v, &u).unwrap_or_else(Rotation3::identity).into();
    (hip, knee)
}

struct Sinusoid {
    joint: usize,
    axis: Unit<Vec3>,
    amplitude: f64,
    /// Cycles per beat.
    rate: f64,
    phase: f64,
}

/// One procedural clip with `params.frames` frames and its click track.
///
/// Requires an SMPL-named skeleton. All randomness comes from `rng`.
pub fn synth_clip(skel: &Skeleton, params: &SynthParams, rng: &mut Rng) -> Result<SynthClip, KinematicsError> {
    let layout = PoseLayout::new(skel.joint_count());
    let n = params.frames;
    let fps = params.fps;
    let bpm = rng.random_range(params.bpm.0..=params.bpm.1);
    let period = 60.0 / bpm;
    let offset = rng.random_range(0.1..0.1 + period);
    let heading = rng.random_range(-PI..PI);
    let step = rng.random_range(0.06..0.16);
    let sway = rng.random_range(0.02..0.05);
    let legs = [leg(skel, "left")?, leg(skel, "right")?];
    let pelvis = joint(skel, "pelvis")?;

    let mut sinusoids = Vec::new();
    let upper = [
        ("spine1", 0.08),
        ("spine2", 0.08),
        ("spine3", 0.08),
        ("neck", 0.15),
        ("head", 0.2),
        ("left_collar", 0.1),
        ("right_collar", 0.1),
        ("left_shoulder", 0.6),
        ("right_shoulder", 0.6),
        ("left_elbow", 0.7),
        ("right_elbow", 0.7),
        ("left_wrist", 0.3),
        ("right_wrist", 0.3),
    ];
    for (name, amp) in upper {
        let axis = Unit::new_normalize(Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ) + Vec3::new(0.0, 0.0, 1e-3));
        sinusoids.push(Sinusoid {
            joint: joint(skel, name)?,
            axis,
            amplitude: amp * rng.random_range(0.5..1.0),
            rate: [0.5, 1.0][rng.random_range(0..2)],
            phase: rng.random_range(0.0..2.0 * PI),
        });
    }

    // Feet start side by side under the hips, level with the ground.
    let face = rot_z(heading);
    let lateral = face * Vec3::x();
    let forward = face * -Vec3::y();
    let rest = skel.rest_positions();
    let home: Vec<Vec3> = legs.iter().map(|l| Vec3::new(rest[l.ankle].x, rest[l.ankle].y, 0.0)).collect();
    let home: Vec<Vec3> = home.iter().map(|h| face * h).collect();
    let foot_rot: Vec<Mat3> = legs.iter().map(|l| face * rot_x(level_foot_pitch(skel.offset(l.toe)))).collect();

    // Foot placement at the start of beat k (k = -1 before the first beat):
    // on beat k the foot k mod 2 swings between its positions at k and k+1.
    let beats_total = ((n as f64 / fps - offset) / period).ceil().max(0.0) as i64 + 2;
    let mut placements: Vec<[Vec3; 2]> = vec![[home[0], home[1]]];
    for k in 0..beats_total {
        let mut next = *placements.last().expect("seeded");
        let side = (k % 2) as usize;
        let dir = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        let jitter = rng.random_range(-0.03..0.03);
        next[side] = home[side] + forward * (dir * step) + lateral * jitter;
        placements.push(next);
    }

    let mut clip = MotionClip::rest(n, fps, layout)?;
    for i in 0..n {
        let t = i as f64 / fps;
        let beat_pos = (t - offset) / period;
        let k = beat_pos.floor();
        let phase = beat_pos - k;
        let idx = (k + 1.0).max(0.0) as usize;
        let mut feet = placements[idx.min(placements.len() - 1)];
        if k >= 0.0 {
            let side = (k as i64 % 2) as usize;
            let to = placements[(idx + 1).min(placements.len() - 1)][side];
            let s = (phase / SWING).min(1.0);
            let ease = 0.5 - 0.5 * (PI * s).cos();
            feet[side] = feet[side] + (to - feet[side]) * ease + Vec3::z() * (LIFT * (PI * s).sin());
        }
        let stance = if k >= 0.0 { 1 - (k as i64 % 2) as usize } else { 0 };
        let mid = (feet[0] + feet[1]) * 0.5;
        let shift = (feet[stance] - mid).component_mul(&Vec3::new(1.0, 1.0, 0.0));
        let shift = shift.try_normalize(1e-9).unwrap_or_else(Vec3::zeros) * sway * (PI * phase).sin();
        let bounce = BOUNCE * 0.5 * (1.0 + (2.0 * PI * beat_pos).cos());
        let root = Vec3::new(mid.x, mid.y, PELVIS_HEIGHT - bounce) + shift;
        let pelvis_rot = face * rot_z(0.15 * (PI * beat_pos).sin()) * rot_x(0.05 * (2.0 * PI * beat_pos).sin());
        clip.set_root_translation(i, root);
        clip.set_rot6d(i, pelvis, &matrix_to_rot6d(&pelvis_rot)?);
        for (leg, (target, frot)) in legs.iter().zip(feet.iter().zip(&foot_rot)) {
            let hip_pos = root + pelvis_rot * skel.offset(leg.hip);
            let (hip, knee) = two_bone_ik(skel, leg, hip_pos, &pelvis_rot, *target);
            let ankle = (pelvis_rot * hip * knee).transpose() * frot;
            clip.set_rot6d(i, leg.hip, &matrix_to_rot6d(&hip)?);
            clip.set_rot6d(i, leg.knee, &matrix_to_rot6d(&knee)?);
            clip.set_rot6d(i, leg.ankle, &matrix_to_rot6d(&ankle)?);
        }
        for s in &sinusoids {
            let angle = s.amplitude * (2.0 * PI * s.rate * beat_pos + s.phase).sin();
            let r: Mat3 = Rotation3::from_axis_angle(&s.axis, angle).into();
            clip.set_rot6d(i, s.joint, &matrix_to_rot6d(&r)?);
        }
    }
    if n >= 2 {
        let labels = extract_contact_labels(&clip, skel, ContactThresholds::default())?;
        clip.set_contacts(&labels);
    }
    let seconds = n as f64 / fps;
    let beat_times: Vec<f64> = (0..).map(|k| offset + k as f64 * period).take_while(|&t| t < seconds).collect();
    let audio = click_track(&beat_times, seconds, params.sample_rate);
    Ok(SynthClip { motion: clip, audio, bpm, beat_times })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::forward_kinematics;
    use crate::rng::SeedStream;

    #[test]
    fn ik_reaches_targets() {
        let skel = Skeleton::smpl();
        let l = leg(&skel, "left").unwrap();
        let parent = rot_z(0.3) * rot_x(0.1);
        let hip_pos = Vec3::new(0.1, 0.0, 0.7);
        for target in [Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.2, -0.15, 0.05), Vec3::new(0.05, 0.1, 0.02)] {
            let (hip, knee) = two_bone_ik(&skel, &l, hip_pos, &parent, target);
            let ankle = hip_pos + parent * hip * (skel.offset(l.knee) + knee * skel.offset(l.ankle));
            assert!((ankle - target).norm() < 1e-9, "{target:?} → {ankle:?}");
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let skel = Skeleton::smpl();
        let p = SynthParams { frames: 60, ..SynthParams::default() };
        let a = synth_clip(&skel, &p, &mut SeedStream::new(5).rng(0)).unwrap();
        let b = synth_clip(&skel, &p, &mut SeedStream::new(5).rng(0)).unwrap();
        let c = synth_clip(&skel, &p, &mut SeedStream::new(6).rng(0)).unwrap();
        assert_eq!(a.motion, b.motion);
        assert_eq!(a.audio, b.audio);
        assert_ne!(a.motion, c.motion);
    }

    #[test]
    fn stance_feet_stay_planted_and_get_contact_labels() {
        let skel = Skeleton::smpl();
        let p = SynthParams::default();
        for seed in 0..4 {
            let clip = synth_clip(&skel, &p, &mut SeedStream::new(seed).rng(0)).unwrap();
            let contacts = clip.motion.contacts();
            assert!(contacts.sum() > 0.0);
            for c in 0..4 {
                assert!(contacts.column(c).sum() > 10.0, "seed {seed}: foot slot {c} rarely in contact");
            }
            // Labeled frames barely move.
            let pos = forward_kinematics(&skel, &clip.motion).unwrap();
            let feet = skel.feet();
            for i in 0..clip.motion.frames() - 1 {
                for (c, &f) in feet.iter().enumerate() {
                    if contacts[[i, c]] == 1.0 {
                        let v = (0..3).map(|k| (pos[[i + 1, f, k]] - pos[[i, f, k]]).powi(2)).sum::<f64>().sqrt() * p.fps;
                        assert!(v < 0.3);
                    }
                }
            }
            assert_eq!(clip.audio.samples().len(), 5 * 22050);
            assert!(clip.beat_times.len() >= 7);
        }
    }

    #[test]
    fn detected_audio_beats_match_the_choreography() {
        let skel = Skeleton::smpl();
        let p = SynthParams { frames: 300, ..SynthParams::default() };
        for seed in 0..3 {
            let clip = synth_clip(&skel, &p, &mut SeedStream::new(seed).rng(0)).unwrap();
            let grid = crate::audio::detect_beats(&clip.audio).unwrap();
            assert!((grid.tempo_bpm.unwrap() - clip.bpm).abs() < 3.0, "seed {seed}: {:?} vs {}", grid.tempo_bpm, clip.bpm);
            for b in &grid.beat_times {
                let d = clip.beat_times.iter().map(|t| (t - b).abs()).fold(f64::INFINITY, f64::min);
                assert!(d < 0.04, "seed {seed}: detected beat {b} is {d} s off");
            }
            let m = crate::metrics::evaluate_clip("s", &clip.motion, &skel, Some(&clip.beat_times), 3.0, Default::default()).unwrap();
            // One foot is always planted, so the physical contact score vanishes.
            assert!(m.pfc < 1e-9 && !m.pfc_degenerate);
            assert!(m.beat_alignment.unwrap() > 0.5);
            assert!(m.bone_drift < 1e-9);
        }
    }
}
