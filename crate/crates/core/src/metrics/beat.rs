use ndarray::ArrayView3;

use super::MetricsError;
use crate::kinematics::{forward_kinematics, MotionClip, Skeleton};

/// Default Gaussian width of the beat-alignment score, in motion frames.
pub const DEFAULT_SIGMA_FRAMES: f64 = 3.0;

/// Times (s) of strict local minima of the mean joint speed. Speed sample
/// `i` is the forward difference from frame `i` to `i+1` and is stamped at
/// `i / fps`.
pub fn kinematic_beats_from_positions(pos: ArrayView3<'_, f64>, fps: f64) -> Result<Vec<f64>, MetricsError> {
    let (n, joints, _) = pos.dim();
    if n < 3 {
        return Err(MetricsError::TooShort { needed: 3, got: n });
    }
    let speed: Vec<f64> = (0..n - 1)
        .map(|i| {
            (0..joints)
                .map(|j| (0..3).map(|k| (pos[[i + 1, j, k]] - pos[[i, j, k]]).powi(2)).sum::<f64>().sqrt())
                .sum::<f64>()
                * fps
                / joints as f64
        })
        .collect();
    Ok((1..speed.len().saturating_sub(1))
        .filter(|&i| speed[i] < speed[i - 1] && speed[i] < speed[i + 1])
        .map(|i| i as f64 / fps)
        .collect())
}

pub fn kinematic_beats(clip: &MotionClip, skel: &Skeleton) -> Result<Vec<f64>, MetricsError> {
    let pos = forward_kinematics(skel, clip)?;
    kinematic_beats_from_positions(pos.view(), clip.fps())
}

/// Mean over music beats of `exp(−d²/(2σ²))`, where `d` is the distance to
/// the nearest kinematic beat. Times and `sigma` in seconds. Returns 0 when
/// there are no kinematic beats.
pub fn beat_alignment(kinematic: &[f64], music: &[f64], sigma: f64) -> Result<f64, MetricsError> {
    if music.is_empty() {
        return Err(MetricsError::EmptyMusicBeats);
    }
    if kinematic.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = music
        .iter()
        .map(|b| {
            let d = kinematic.iter().map(|k| (b - k).abs()).fold(f64::INFINITY, f64::min);
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .sum();
    Ok(total / music.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;

    /// One joint moving along x with the given per-frame speeds (m/s).
    fn from_speeds(speeds: &[f64], fps: f64) -> Array3<f64> {
        let mut x = vec![0.0];
        for s in speeds {
            x.push(x.last().unwrap() + s / fps);
        }
        Array3::from_shape_fn((x.len(), 1, 3), |(i, _, k)| if k == 0 { x[i] } else { 0.0 })
    }

    #[test]
    fn constant_velocity_has_no_beats() {
        let pos = from_speeds(&[0.7; 20], 30.0);
        assert!(kinematic_beats_from_positions(pos.view(), 30.0).unwrap().is_empty());
    }

    #[test]
    fn monotone_speed_has_no_interior_minima() {
        let speeds: Vec<f64> = (0..20).map(|i| 2.0 - 0.1 * i as f64).collect();
        let pos = from_speeds(&speeds, 30.0);
        assert!(kinematic_beats_from_positions(pos.view(), 30.0).unwrap().is_empty());
    }

    #[test]
    fn abs_sine_minima_land_on_its_zeros() {
        let fps = 30.0;
        // |sin(π i / 10)| vanishes at i = 10, 20, 30.
        let speeds: Vec<f64> = (0..36).map(|i| (std::f64::consts::PI * i as f64 / 10.0).sin().abs()).collect();
        let pos = from_speeds(&speeds, fps);
        let beats = kinematic_beats_from_positions(pos.view(), fps).unwrap();
        let expected: Vec<f64> = [10.0, 20.0, 30.0].iter().map(|i| i / fps).collect();
        assert_eq!(beats.len(), expected.len(), "{beats:?}");
        for (b, e) in beats.iter().zip(&expected) {
            assert!((b - e).abs() < 1e-12);
        }
    }

    #[test]
    fn alignment_oracles() {
        let sigma = 0.1;
        assert_eq!(beat_alignment(&[0.5, 1.0, 1.5], &[0.5, 1.0, 1.5], sigma).unwrap(), 1.0);
        assert_eq!(beat_alignment(&[], &[0.5], sigma).unwrap(), 0.0);
        let offset = beat_alignment(&[1.0 + sigma], &[1.0], sigma).unwrap();
        assert!((offset - (-0.5f64).exp()).abs() < 1e-9);
        assert_eq!(beat_alignment(&[1.0], &[], sigma), Err(MetricsError::EmptyMusicBeats));
    }

    proptest! {
        #[test]
        fn alignment_is_bounded_and_decays_with_offset(
            music in prop::collection::vec(0.0f64..10.0, 1..8),
            d1 in 0.0f64..0.2,
            extra in 0.0f64..0.2,
        ) {
            let mut music = music;
            music.sort_by(f64::total_cmp);
            music.dedup();
            // Shifting every kinematic beat by a common offset from its music
            // beat. Offsets stay below half the closest spacing, so each music
            // beat keeps its own kinematic beat as the nearest one.
            let gap = music.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
            let cap = if gap.is_finite() { 0.45 * gap } else { 1.0 };
            let (a, b) = ((d1).min(cap), (d1 + extra).min(cap));
            let near: Vec<f64> = music.iter().map(|m| m + a).collect();
            let far: Vec<f64> = music.iter().map(|m| m + b).collect();
            let sa = beat_alignment(&near, &music, 0.1).unwrap();
            let sb = beat_alignment(&far, &music, 0.1).unwrap();
            prop_assert!((0.0..=1.0).contains(&sa));
            prop_assert!(sb <= sa + 1e-12);
        }
    }
}
