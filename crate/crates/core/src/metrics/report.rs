use std::fmt::Write as _;
use std::io;

use ndarray::Array2;

use super::{
    beat_alignment, bone_length_drift, diversity, frechet_distance, geometric_features_from_positions,
    kinematic_beats_from_positions, kinetic_features_from_positions, pfc_from_positions, FeatureDistribution,
    MetricsError, PfcOptions, GEOMETRIC_VERSION,
};
use crate::kinematics::{forward_kinematics, MotionClip, Skeleton};

/// Metrics of one motion clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipMetrics {
    pub id: String,
    pub frames: usize,
    pub pfc: f64,
    pub pfc_degenerate: bool,
    /// `None` when no music beats were supplied.
    pub beat_alignment: Option<f64>,
    pub bone_drift: f64,
    pub kinetic: Vec<f64>,
    pub geometric: Vec<f64>,
}

/// Runs every per-clip metric on one forward-kinematics pass.
/// `music_beats` are in seconds, `sigma_frames` in motion frames.
pub fn evaluate_clip(
    id: &str,
    clip: &MotionClip,
    skel: &Skeleton,
    music_beats: Option<&[f64]>,
    sigma_frames: f64,
    opts: PfcOptions,
) -> Result<ClipMetrics, MetricsError> {
    let pos = forward_kinematics(skel, clip)?;
    let fps = clip.fps();
    let p = pfc_from_positions(pos.view(), fps, skel.feet(), opts)?;
    let beat_alignment = match music_beats {
        Some(beats) if !beats.is_empty() => {
            let kin = kinematic_beats_from_positions(pos.view(), fps)?;
            Some(beat_alignment(&kin, beats, sigma_frames / fps)?)
        }
        _ => None,
    };
    Ok(ClipMetrics {
        id: id.to_string(),
        frames: clip.frames(),
        pfc: p.value,
        pfc_degenerate: p.degenerate,
        beat_alignment,
        bone_drift: bone_length_drift(pos.view(), skel)?,
        kinetic: kinetic_features_from_positions(pos.view(), fps)?,
        geometric: geometric_features_from_positions(pos.view(), skel)?,
    })
}

/// Arithmetic mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Aggregate {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt(), count: values.len() })
    }
}

/// Per-clip metrics, failures and corpus-level statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub meta: Vec<(String, String)>,
    pub clips: Vec<ClipMetrics>,
    /// Clip id and error message for clips that could not be evaluated.
    pub failures: Vec<(String, String)>,
    pub dist_k: Option<f64>,
    pub dist_g: Option<f64>,
    pub fid_k: Option<f64>,
    pub fid_g: Option<f64>,
}

fn stack(rows: &[&Vec<f64>]) -> Array2<f64> {
    let width = rows.first().map_or(0, |r| r.len());
    Array2::from_shape_fn((rows.len(), width), |(i, j)| rows[i][j])
}

impl MetricReport {
    /// Builds a report; diversity is filled in when at least two clips
    /// succeeded.
    pub fn new(meta: Vec<(String, String)>, clips: Vec<ClipMetrics>, failures: Vec<(String, String)>) -> Self {
        let mut meta = meta;
        meta.push(("geometric_predicates".into(), GEOMETRIC_VERSION.into()));
        let mut report = Self { meta, clips, failures, ..Self::default() };
        if report.clips.len() >= 2 {
            report.dist_k = diversity(&report.kinetic_matrix()).ok();
            report.dist_g = diversity(&report.geometric_matrix()).ok();
        }
        report
    }

    pub fn kinetic_matrix(&self) -> Array2<f64> {
        stack(&self.clips.iter().map(|c| &c.kinetic).collect::<Vec<_>>())
    }

    pub fn geometric_matrix(&self) -> Array2<f64> {
        stack(&self.clips.iter().map(|c| &c.geometric).collect::<Vec<_>>())
    }

    /// Frechet distances of both feature spaces against a reference report.
    pub fn compare_to(&mut self, reference: &MetricReport) -> Result<(), MetricsError> {
        let fd = |a: Array2<f64>, b: Array2<f64>| -> Result<f64, MetricsError> {
            frechet_distance(&FeatureDistribution::from_features(&a)?, &FeatureDistribution::from_features(&b)?)
        };
        self.fid_k = Some(fd(self.kinetic_matrix(), reference.kinetic_matrix())?);
        self.fid_g = Some(fd(self.geometric_matrix(), reference.geometric_matrix())?);
        Ok(())
    }

    pub fn pfc(&self) -> Option<Aggregate> {
        Aggregate::of(&self.clips.iter().map(|c| c.pfc).collect::<Vec<_>>())
    }

    pub fn beat_alignment(&self) -> Option<Aggregate> {
        Aggregate::of(&self.clips.iter().filter_map(|c| c.beat_alignment).collect::<Vec<_>>())
    }

    pub fn bone_drift(&self) -> Option<Aggregate> {
        Aggregate::of(&self.clips.iter().map(|c| c.bone_drift).collect::<Vec<_>>())
    }

    /// `key: value` blocks: metadata, one block per clip, failures, then the
    /// aggregate section. Floats use the shortest exact representation.
    pub fn to_text(&self) -> String {
        let mut s = String::from("REPORT v1\n");
        for (k, v) in &self.meta {
            writeln!(s, "{k}: {v}").unwrap();
        }
        for c in &self.clips {
            writeln!(s, "\n[clip {}]", c.id).unwrap();
            writeln!(s, "frames: {}", c.frames).unwrap();
            writeln!(s, "pfc: {}", c.pfc).unwrap();
            writeln!(s, "pfc_degenerate: {}", c.pfc_degenerate).unwrap();
            if let Some(b) = c.beat_alignment {
                writeln!(s, "beat_alignment: {b}").unwrap();
            }
            writeln!(s, "bone_drift: {}", c.bone_drift).unwrap();
        }
        for (id, err) in &self.failures {
            writeln!(s, "\n[failure {id}]\nerror: {err}").unwrap();
        }
        writeln!(s, "\n[aggregate]").unwrap();
        writeln!(s, "clips: {}", self.clips.len()).unwrap();
        writeln!(s, "failures: {}", self.failures.len()).unwrap();
        writeln!(s, "pfc_degenerate: {}", self.clips.iter().filter(|c| c.pfc_degenerate).count()).unwrap();
        for (name, agg) in [("pfc", self.pfc()), ("beat_alignment", self.beat_alignment()), ("bone_drift", self.bone_drift())] {
            if let Some(a) = agg {
                writeln!(s, "{name}_mean: {}\n{name}_std: {}", a.mean, a.std).unwrap();
            }
        }
        for (name, v) in [("dist_k", self.dist_k), ("dist_g", self.dist_g), ("fid_k", self.fid_k), ("fid_g", self.fid_g)] {
            if let Some(v) = v {
                writeln!(s, "{name}: {v}").unwrap();
            }
        }
        s
    }

    /// One CSV row per clip.
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["id", "frames", "pfc", "pfc_degenerate", "beat_alignment", "bone_drift"])?;
        for c in &self.clips {
            w.write_record([
                c.id.clone(),
                c.frames.to_string(),
                c.pfc.to_string(),
                c.pfc_degenerate.to_string(),
                c.beat_alignment.map(|b| b.to_string()).unwrap_or_default(),
                c.bone_drift.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::PoseLayout;

    fn walking(frames: usize, speed: f64) -> MotionClip {
        let mut clip = MotionClip::rest(frames, 30.0, PoseLayout::smpl()).unwrap();
        for i in 0..frames {
            let t = i as f64 / 30.0;
            clip.set_root_translation(i, nalgebra::Vector3::new(speed * t * t, 0.1 * (6.0 * t).sin(), 0.9));
        }
        clip
    }

    #[test]
    fn static_corpus_reports_degenerate_zero_pfc() {
        let skel = Skeleton::smpl();
        let clips: Vec<ClipMetrics> = (0..3)
            .map(|k| {
                let clip = MotionClip::rest(20, 30.0, PoseLayout::smpl()).unwrap();
                evaluate_clip(&format!("c{k}"), &clip, &skel, Some(&[0.2, 0.4]), 3.0, PfcOptions::default()).unwrap()
            })
            .collect();
        let mut report = MetricReport::new(vec![("fps".into(), "30".into())], clips, vec![]);
        assert!(report.clips.iter().all(|c| c.pfc == 0.0 && c.pfc_degenerate));
        assert_eq!(report.pfc().unwrap().mean, 0.0);
        assert_eq!(report.beat_alignment().unwrap().mean, 0.0);
        assert_eq!(report.dist_k, Some(0.0));
        let text = report.to_text();
        assert!(text.contains("pfc_degenerate: 3"));
        assert!(text.contains("[clip c1]"));
        let reference = report.clone();
        report.compare_to(&reference).unwrap();
        assert!(report.fid_k.unwrap() < 1e-6 && report.fid_g.unwrap() < 1e-6);
    }

    #[test]
    fn aggregate_is_the_mean_of_clips_and_csv_has_a_row_each() {
        let skel = Skeleton::smpl();
        let clips: Vec<ClipMetrics> = [0.5, 1.0, 2.0]
            .iter()
            .enumerate()
            .map(|(k, &v)| evaluate_clip(&format!("w{k}"), &walking(30, v), &skel, None, 3.0, PfcOptions::default()).unwrap())
            .collect();
        let report = MetricReport::new(vec![], clips, vec![("bad".into(), "too short".into())]);
        let mean = report.clips.iter().map(|c| c.bone_drift).sum::<f64>() / 3.0;
        assert!((report.bone_drift().unwrap().mean - mean).abs() < 1e-15);
        assert!(report.beat_alignment().is_none());
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(1).unwrap().starts_with("w0,30,"));
        assert!(report.to_text().contains("[failure bad]"));
    }
}
