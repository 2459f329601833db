use std::path::{Path, PathBuf};

use motiondiff::diffusion::{self, long_form_sample, overlapping_slices, EditConstraint, SamplerConfig};
use motiondiff::formats::{read_constraint, MotionFile};
use motiondiff::kinematics::{MotionClip, PoseLayout, SMPL_POSE_DIM};
use ndarray::{s, Array2};
use rayon::prelude::*;

use super::{clip_seed, create_dir, load_conditioning, load_model, out_dir, read_motion, LoadedModel};
use crate::config::RunConfig;
use crate::error::{CliError, Result};

/// Where the edit constraint comes from.
#[derive(Clone, Debug)]
pub enum ConstraintSource {
    File(PathBuf),
    /// A named mask over a reference motion's first `N` frames.
    Mask { reference: PathBuf, mask: String },
}

/// Builds a constraint from a mask spec: `none`, `lower-body`, `upper-body`,
/// `inbetween:K`, `continuation:K` or `keyframes:I,J,...`.
pub fn parse_mask(spec: &str, reference: &Array2<f64>) -> Result<EditConstraint> {
    let bad = || CliError::Config(format!("unknown mask `{spec}`"));
    let count = |v: &str| v.parse::<usize>().map_err(|_| bad());
    let (name, arg) = spec.split_once(':').unwrap_or((spec, ""));
    Ok(match (name, arg) {
        ("none", "") => EditConstraint::empty(reference.nrows(), reference.ncols()),
        ("lower-body", "") => EditConstraint::lower_body(reference)?,
        ("upper-body", "") => EditConstraint::upper_body(reference)?,
        ("inbetween", k) => EditConstraint::inbetween(reference, count(k)?),
        ("continuation", k) => EditConstraint::continuation(reference, count(k)?),
        ("keyframes", list) => {
            let frames = list.split(',').map(|f| count(f.trim())).collect::<Result<Vec<_>>>()?;
            EditConstraint::keyframes(reference, &frames)
        }
        _ => return Err(bad()),
    })
}

fn provenance(
    file: MotionFile,
    command: &str,
    cfg: &RunConfig,
    checkpoint: &Path,
    features: &Path,
    loaded: &LoadedModel,
) -> MotionFile {
    let sampler = cfg.sampler_config();
    let mut file = file
        .with_meta("command", command)
        .with_meta("seed", cfg.seed)
        .with_meta("checkpoint", checkpoint.display())
        .with_meta("checkpoint_step", loaded.step)
        .with_meta("features", features.display())
        .with_meta("guidance_weight", sampler.guidance_weight)
        .with_meta("guidance_dropout", sampler.guidance_dropout)
        .with_meta("diffusion_steps", loaded.schedule.steps());
    for (k, v) in cfg.pairs().into_iter().filter(|(k, _)| k != "out") {
        file = file.with_meta(&format!("config.{k}"), v);
    }
    file
}

fn to_clip(x: Array2<f64>, fps: f64) -> Result<MotionClip> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Numeric("sample contains non-finite values".into()));
    }
    Ok(MotionClip::new(x, fps, PoseLayout::smpl())?)
}

/// Which stretches of the feature file condition the draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Windows {
    /// The first `N` frames.
    First,
    /// Every `N`-frame window at the configured stride.
    All,
}

fn draw(
    cfg: &RunConfig,
    checkpoint: &Path,
    features: &Path,
    constraint: Option<&EditConstraint>,
    command: &str,
    windows: Windows,
) -> Result<Vec<PathBuf>> {
    let out = out_dir(cfg)?;
    let loaded = load_model(checkpoint)?;
    let mcfg = loaded.model.config();
    let n = mcfg.seq_len;
    let keep = if windows == Windows::All { usize::MAX } else { n };
    let cond = load_conditioning(features, loaded.fps, mcfg.cond_dim, n, keep)?;
    if let Some(c) = constraint {
        if c.dim() != (n, SMPL_POSE_DIM) {
            return Err(CliError::Data(format!(
                "constraint shape {:?} does not match the sample shape {:?}",
                c.dim(),
                (n, SMPL_POSE_DIM)
            )));
        }
    }
    let stride = if cfg.window_stride == 0 { (n / 2).max(1) } else { cfg.window_stride };
    let starts: Vec<usize> = (0..).map(|w| w * stride).take_while(|s| s + n <= cond.nrows()).collect();
    // Job `(w, k)` is clip `k` of window `w`; its seed index continues
    // across windows so window 0 matches a plain run.
    let jobs: Vec<(usize, usize)> = (0..starts.len()).flat_map(|w| (0..cfg.samples).map(move |k| (w, k))).collect();
    let clips = jobs
        .par_iter()
        .map(|&(w, k)| {
            let index = w * cfg.samples + k;
            let scfg = SamplerConfig { seed: clip_seed(cfg.seed, index), ..cfg.sampler_config() };
            let c = cond.slice(s![starts[w]..starts[w] + n, ..]).to_owned();
            let x = diffusion::sample(&loaded.model, Some(&c), n, SMPL_POSE_DIM, &loaded.schedule, &scfg, constraint)?;
            to_clip(x, loaded.fps)
        })
        .collect::<Result<Vec<_>>>()?;
    create_dir(out)?;
    let mut paths = Vec::new();
    for (&(w, k), clip) in jobs.iter().zip(clips) {
        let index = w * cfg.samples + k;
        let mut file = provenance(MotionFile::new(clip), command, cfg, checkpoint, features, &loaded)
            .with_meta("index", index)
            .with_meta("clip_seed", clip_seed(cfg.seed, index));
        let name = match windows {
            Windows::First => format!("{command}_{k:03}.motion"),
            Windows::All => {
                file = file.with_meta("window", w).with_meta("window_start", starts[w]);
                format!("{command}_w{w:03}_{k:03}.motion")
            }
        };
        let path = out.join(name);
        file.write(&path)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Writes `samples` clips `sample_KKK.motion`, clip `k` seeded with
/// [`clip_seed`]`(seed, k)`.
pub fn sample(cfg: &RunConfig, checkpoint: &Path, features: &Path) -> Result<Vec<PathBuf>> {
    draw(cfg, checkpoint, features, None, "sample", Windows::First)
}

/// [`sample`] over every `N`-frame window of the features, `window_stride`
/// apart (`N/2` by default), written as `sample_wWWW_KKK.motion`.
pub fn sample_windows(cfg: &RunConfig, checkpoint: &Path, features: &Path) -> Result<Vec<PathBuf>> {
    draw(cfg, checkpoint, features, None, "sample", Windows::All)
}

/// Constrained sampling; writes `edit_KKK.motion`. Seeds match
/// [`sample`], so an empty mask reproduces its output.
pub fn edit(cfg: &RunConfig, checkpoint: &Path, features: &Path, source: &ConstraintSource) -> Result<Vec<PathBuf>> {
    let constraint = match source {
        ConstraintSource::File(path) => {
            if !path.is_file() {
                return Err(CliError::missing(path.clone()));
            }
            read_constraint(path)?
        }
        ConstraintSource::Mask { reference, mask } => {
            let n = load_model(checkpoint)?.model.config().seq_len;
            let motion = read_motion(reference)?;
            let data = motion.clip.data();
            if data.nrows() < n {
                return Err(CliError::Data(format!(
                    "{}: {} frames, the model samples {n}",
                    reference.display(),
                    data.nrows()
                )));
            }
            parse_mask(mask, &data.slice(s![..n, ..]).to_owned())?
        }
    };
    draw(cfg, checkpoint, features, Some(&constraint), "edit", Windows::First)
}

#[derive(Clone, Debug)]
pub struct LongformOutput {
    pub path: PathBuf,
    pub slices: usize,
    pub frames: usize,
    pub slice_paths: Vec<PathBuf>,
}

/// Generates `round(total_seconds · fps)` frames from `B` half-overlapping
/// clips of the model's length `N`, with `B = ⌈frames / (N/2)⌉ − 1` (at
/// least 2). When the features end inside the last slice, their final frame
/// is repeated to fill it; the stitched motion is then cut to length.
pub fn longform(cfg: &RunConfig, checkpoint: &Path, features: &Path, keep_slices: bool) -> Result<LongformOutput> {
    let out = out_dir(cfg)?;
    let loaded = load_model(checkpoint)?;
    let mcfg = loaded.model.config();
    let n = mcfg.seq_len;
    if n < 4 || n % 2 != 0 {
        return Err(CliError::Config(format!("long-form generation needs an even clip length of at least 4, got {n}")));
    }
    let half = n / 2;
    let total = (cfg.total_seconds * loaded.fps).round() as usize;
    let slices = total.div_ceil(half).saturating_sub(1).max(2);
    let needed = (slices + 1) * half;
    let cond = load_conditioning(features, loaded.fps, mcfg.cond_dim, total.min(needed), needed)?;
    let mut padded = Array2::zeros((needed, cond.ncols()));
    for i in 0..needed {
        padded.row_mut(i).assign(&cond.row(i.min(cond.nrows() - 1)));
    }
    let conds = overlapping_slices(&padded, n, slices)?;
    let out_clips = long_form_sample(&loaded.model, &conds, n, SMPL_POSE_DIM, &loaded.schedule, &cfg.sampler_config())?;
    for k in 1..slices {
        assert!(
            out_clips.clips[k - 1].slice(s![half.., ..]) == out_clips.clips[k].slice(s![..half, ..]),
            "slice {k} overlap diverged before blending"
        );
    }
    let stitched = out_clips.stitched.slice(s![..total, ..]).to_owned();
    let clip = to_clip(stitched, loaded.fps)?;
    let slice_clips: Vec<MotionClip> = if keep_slices {
        out_clips.clips.iter().map(|c| to_clip(c.clone(), loaded.fps)).collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    create_dir(out)?;
    let path = out.join("longform.motion");
    provenance(MotionFile::new(clip), "longform", cfg, checkpoint, features, &loaded)
        .with_meta("slices", slices)
        .with_meta("total_seconds", cfg.total_seconds)
        .write(&path)?;
    let mut slice_paths = Vec::new();
    for (k, c) in slice_clips.into_iter().enumerate() {
        let p = out.join(format!("slice_{k:03}.motion"));
        provenance(MotionFile::new(c), "longform-slice", cfg, checkpoint, features, &loaded)
            .with_meta("slice", k)
            .write(&p)?;
        slice_paths.push(p);
    }
    Ok(LongformOutput { path, slices, frames: total, slice_paths })
}
