use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use motiondiff::audio::{baseline_beat_times, detect_beats, read_wav};
use motiondiff::diffusion::{sample, SamplerConfig};
use motiondiff::formats::FeatureFile;
use motiondiff::kinematics::{MotionClip, PoseLayout, Skeleton, SMPL_POSE_DIM};
use motiondiff::metrics::{evaluate_clip, pfc, spearman, ClipMetrics, MetricReport};
use rayon::prelude::*;

use super::{clip_seed, create_dir, load_conditioning, load_model, motion_files, out_dir, read_motion};
use crate::config::RunConfig;
use crate::error::{CliError, Result};

#[derive(Clone, Debug, Default)]
pub struct EvaluateInputs {
    pub motions: Option<PathBuf>,
    pub music: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub sweep: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub csv: bool,
}

/// Mean PFC of the clips sampled from one checkpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub step: u64,
    pub mean_pfc: f64,
    pub std_pfc: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, Default)]
pub struct EvaluateOutput {
    pub report: Option<MetricReport>,
    pub sweep: Vec<SweepPoint>,
    /// Rank correlation of checkpoint order with mean PFC.
    pub sweep_spearman: Option<f64>,
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn feature_beats(path: &Path) -> Result<Option<Vec<f64>>> {
    let file = FeatureFile::read(path)?;
    Ok(if file.source == "baseline" { baseline_beat_times(&file.features, file.fps) } else { None })
}

/// Music beats for a motion: `<stem>.wav`, then `<stem>.features` in the
/// music directory, then the feature file named in the motion's header.
/// Audio whose beats cannot be tracked falls through to the feature files.
fn music_beats(music: Option<&Path>, stem: &str, meta_features: Option<&str>) -> Result<Option<Vec<f64>>> {
    if let Some(dir) = music {
        let wav = dir.join(format!("{stem}.wav"));
        if wav.is_file() {
            let audio = read_wav(&wav)?;
            if let Some(beats) = detect_beats(&audio).ok().map(|g| g.beat_times).filter(|b| !b.is_empty()) {
                return Ok(Some(beats));
            }
        }
        let feats = dir.join(format!("{stem}.features"));
        if feats.is_file() {
            return feature_beats(&feats);
        }
    }
    match meta_features.map(Path::new) {
        Some(p) if p.is_file() => feature_beats(p),
        _ => Ok(None),
    }
}

/// Scored clips and `(id, error)` for the ones that failed.
type Scored = (Vec<ClipMetrics>, Vec<(String, String)>);

fn score_dir(
    cfg: &RunConfig,
    skel: &Skeleton,
    dir: &Path,
    music: Option<&Path>,
    with_beats: bool,
) -> Result<Scored> {
    let files = motion_files(dir)?;
    if files.is_empty() {
        return Err(CliError::Data(format!("{}: no .motion files", dir.display())));
    }
    let results: Vec<(String, Result<ClipMetrics>)> = files
        .par_iter()
        .map(|path| {
            let id = stem(path);
            let scored = (|| {
                let file = read_motion(path)?;
                let beats = if with_beats { music_beats(music, &id, file.meta("features"))? } else { None };
                Ok(evaluate_clip(&id, &file.clip, skel, beats.as_deref(), cfg.sigma_frames, cfg.pfc_options())?)
            })();
            (id, scored)
        })
        .collect();
    let mut clips = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok(m) => clips.push(m),
            Err(e) => failures.push((id, e.to_string())),
        }
    }
    Ok((clips, failures))
}

fn sweep(cfg: &RunConfig, skel: &Skeleton, dir: &Path, features: &Path) -> Result<Vec<SweepPoint>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut ckpts: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    ckpts.sort();
    if ckpts.is_empty() {
        return Err(CliError::Data(format!("{}: no .ckpt files", dir.display())));
    }
    let mut points = Vec::with_capacity(ckpts.len());
    for path in &ckpts {
        let loaded = load_model(path)?;
        let mcfg = loaded.model.config();
        let n = mcfg.seq_len;
        let cond = load_conditioning(features, loaded.fps, mcfg.cond_dim, n, n)?;
        let values = (0..cfg.samples)
            .into_par_iter()
            .map(|k| {
                let scfg = SamplerConfig { seed: clip_seed(cfg.seed, k), ..cfg.sampler_config() };
                let x = sample(&loaded.model, Some(&cond), n, SMPL_POSE_DIM, &loaded.schedule, &scfg, None)?;
                let clip = MotionClip::new(x, loaded.fps, PoseLayout::smpl())?;
                Ok(pfc(&clip, skel, cfg.pfc_options())?.value)
            })
            .collect::<Result<Vec<f64>>>()?;
        let m = values.len() as f64;
        let mean = values.iter().sum::<f64>() / m;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m).sqrt();
        points.push(SweepPoint { step: loaded.step, mean_pfc: mean, std_pfc: std, samples: values.len() });
        eprintln!("checkpoint step {}: mean PFC {mean:.4e}", loaded.step);
    }
    points.sort_by_key(|p| p.step);
    Ok(points)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Scores a motion directory into `report.txt` (and `report.csv`), and/or
/// sweeps a checkpoint directory into `sweep.txt` (and `sweep.csv`).
/// Clips that fail are listed in the report and left out of aggregates.
pub fn evaluate(cfg: &RunConfig, inputs: &EvaluateInputs) -> Result<EvaluateOutput> {
    let out = out_dir(cfg)?;
    if inputs.motions.is_none() && inputs.sweep.is_none() {
        return Err(CliError::Config("evaluate needs --motions or --sweep".into()));
    }
    if inputs.sweep.is_some() && inputs.features.is_none() {
        return Err(CliError::Config("--sweep needs --features".into()));
    }
    for dir in [&inputs.motions, &inputs.music, &inputs.reference, &inputs.sweep].into_iter().flatten() {
        if !dir.is_dir() {
            return Err(CliError::missing(dir.clone()));
        }
    }
    let skel = cfg.load_skeleton()?;
    let mut output = EvaluateOutput::default();

    if let Some(dir) = &inputs.motions {
        let (clips, failures) = score_dir(cfg, &skel, dir, inputs.music.as_deref(), true)?;
        let mut meta = vec![
            ("motions".to_string(), dir.display().to_string()),
            ("sigma_frames".to_string(), cfg.sigma_frames.to_string()),
            ("foot_reduction".to_string(), cfg.pairs().into_iter().find(|(k, _)| k == "foot_reduction").unwrap().1),
            ("horizontal_foot_speed".to_string(), cfg.horizontal_foot_speed.to_string()),
        ];
        if let Some(m) = &inputs.music {
            meta.push(("music".into(), m.display().to_string()));
        }
        if let Some(r) = &inputs.reference {
            meta.push(("reference".into(), r.display().to_string()));
        }
        let mut report = MetricReport::new(meta, clips, failures);
        if let Some(rdir) = &inputs.reference {
            let (rclips, _) = score_dir(cfg, &skel, rdir, None, false)?;
            let reference = MetricReport::new(Vec::new(), rclips, Vec::new());
            if report.clips.len() >= 2 && reference.clips.len() >= 2 {
                report.compare_to(&reference)?;
            } else {
                eprintln!("warning: Frechet distances need at least 2 clips on each side");
            }
        }
        if !report.failures.is_empty() {
            eprintln!("warning: {} clip(s) failed and are excluded from aggregates", report.failures.len());
        }
        create_dir(out)?;
        write(&out.join("report.txt"), &report.to_text())?;
        if inputs.csv {
            let path = out.join("report.csv");
            let f = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
            report.write_csv(f).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        }
        output.report = Some(report);
    }

    if let (Some(dir), Some(features)) = (&inputs.sweep, &inputs.features) {
        let points = sweep(cfg, &skel, dir, features)?;
        let idx: Vec<f64> = (0..points.len()).map(|i| i as f64).collect();
        let means: Vec<f64> = points.iter().map(|p| p.mean_pfc).collect();
        output.sweep_spearman = spearman(&idx, &means);
        let mut text = String::from("# step mean_pfc std_pfc samples\n");
        let mut csv = String::from("step,mean_pfc,std_pfc,samples\n");
        for p in &points {
            writeln!(text, "{} {} {} {}", p.step, p.mean_pfc, p.std_pfc, p.samples).unwrap();
            writeln!(csv, "{},{},{},{}", p.step, p.mean_pfc, p.std_pfc, p.samples).unwrap();
        }
        match output.sweep_spearman {
            Some(r) => writeln!(text, "# spearman {r}").unwrap(),
            None => writeln!(text, "# spearman undefined").unwrap(),
        }
        create_dir(out)?;
        write(&out.join("sweep.txt"), &text)?;
        if inputs.csv {
            write(&out.join("sweep.csv"), &csv)?;
        }
        output.sweep = points;
    }
    Ok(output)
}
