use ndarray::Array2;

use super::{forward_kinematics, KinematicsError, MotionClip, Skeleton};

/// Foot-contact labeling thresholds. A foot joint is in contact when it is
/// within `height` meters of the ground plane and moving slower than
/// `speed` m/s.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactThresholds {
    pub height: f64,
    pub speed: f64,
}

impl Default for ContactThresholds {
    fn default() -> Self {
        Self { height: 0.05, speed: 0.3 }
    }
}

/// Binary `N × 4` contact labels for the skeleton's foot joints.
///
/// The ground plane is the lowest foot-joint height over the whole clip.
/// Speed at frame `i` uses the forward difference to frame `i+1`; the last
/// frame repeats the second-to-last label.
pub fn extract_contact_labels(
    clip: &MotionClip,
    skel: &Skeleton,
    thresholds: ContactThresholds,
) -> Result<Array2<f64>, KinematicsError> {
    let n = clip.frames();
    if n < 2 {
        return Err(KinematicsError::TooShort { needed: 2, got: n });
    }
    let pos = forward_kinematics(skel, clip)?;
    let feet = skel.feet();
    let ground = (0..n)
        .flat_map(|i| feet.iter().map(move |&f| (i, f)))
        .map(|(i, f)| pos[[i, f, 2]])
        .fold(f64::INFINITY, f64::min);
    let fps = clip.fps();
    let mut labels = Array2::zeros((n, 4));
    for i in 0..n - 1 {
        for (c, &f) in feet.iter().enumerate() {
            let speed = (0..3)
                .map(|k| (pos[[i + 1, f, k]] - pos[[i, f, k]]).powi(2))
                .sum::<f64>()
                .sqrt()
                * fps;
            let height = pos[[i, f, 2]] - ground;
            if height < thresholds.height && speed < thresholds.speed {
                labels[[i, c]] = 1.0;
            }
        }
    }
    for c in 0..4 {
        labels[[n - 1, c]] = labels[[n - 2, c]];
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{PoseLayout, Vec3};

    /// Two-joint skeleton: root plus a foot hanging 1 m below it.
    fn biped_stub() -> Skeleton {
        Skeleton::chain(&[Vec3::zeros(), Vec3::new(0.0, 0.0, -1.0)]).unwrap()
    }

    fn clip_with_root(path: &[Vec3]) -> MotionClip {
        let mut clip = MotionClip::rest(path.len(), 30.0, PoseLayout::new(2)).unwrap();
        for (i, p) in path.iter().enumerate() {
            clip.set_root_translation(i, *p);
        }
        clip
    }

    #[test]
    fn pinned_foot_is_always_in_contact() {
        let clip = clip_with_root(&vec![Vec3::new(0.0, 0.0, 1.0); 10]);
        let labels = extract_contact_labels(&clip, &biped_stub(), ContactThresholds::default()).unwrap();
        assert!(labels.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn swinging_foot_is_never_in_contact() {
        // 2 m/s horizontal at 30 fps.
        let path: Vec<_> = (0..10).map(|i| Vec3::new(2.0 * i as f64 / 30.0, 0.0, 1.0)).collect();
        let labels = extract_contact_labels(&clip_with_root(&path), &biped_stub(), ContactThresholds::default()).unwrap();
        assert!(labels.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn label_flips_where_speed_crosses_threshold() {
        // Static for frames 0..=k, then moving at 0.6 m/s. Speed at frame i
        // looks ahead to i+1, so frame k is the first moving frame.
        let k = 6;
        let step = 0.6 / 30.0;
        let path: Vec<_> = (0..12)
            .map(|i| Vec3::new(if i <= k { 0.0 } else { (i - k) as f64 * step }, 0.0, 1.0))
            .collect();
        let labels = extract_contact_labels(&clip_with_root(&path), &biped_stub(), ContactThresholds::default()).unwrap();
        for i in 0..12 {
            let want = if i < k { 1.0 } else { 0.0 };
            assert_eq!(labels[[i, 0]], want, "frame {i}");
        }
    }

    #[test]
    fn raised_foot_is_not_in_contact() {
        let mut path = vec![Vec3::new(0.0, 0.0, 1.0); 4];
        path.extend(vec![Vec3::new(0.0, 0.0, 1.2); 4]);
        let labels = extract_contact_labels(&clip_with_root(&path), &biped_stub(), ContactThresholds::default()).unwrap();
        assert_eq!(labels.column(0).to_vec(), vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
