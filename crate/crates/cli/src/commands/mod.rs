//! One function per CLI verb, callable without going through argument
//! parsing.

mod evaluate;
mod generate;
mod synth_data;
mod train;

use std::fs;
use std::path::{Path, PathBuf};

use motiondiff::audio::load_precomputed;
use motiondiff::diffusion::{cosine_schedule, NoiseSchedule};
use motiondiff::formats::MotionFile;
use motiondiff::model::{load_checkpoint, DanceDenoiser};
use motiondiff::rng::SeedStream;
use ndarray::{s, Array2};

pub use evaluate::{evaluate, EvaluateInputs, EvaluateOutput, SweepPoint};
pub use generate::{edit, longform, parse_mask, sample, sample_windows, ConstraintSource, LongformOutput};
pub use synth_data::synth_data;
pub use train::{read_loss_log, train, LossRow, TrainOutput};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

/// Checkpoint header keys written by `train` and required by sampling.
pub(crate) const RUN_DIFFUSION_STEPS: &str = "diffusion_steps";
pub(crate) const RUN_FPS: &str = "fps";

pub(crate) fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    cfg.out.as_deref().ok_or_else(|| CliError::Config("no output directory: pass --out or set `out`".into()))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// Seed of the `k`-th clip drawn by a sampling command.
pub fn clip_seed(seed: u64, k: usize) -> u64 {
    SeedStream::new(seed).child(k as u64).seed()
}

/// The EMA weights of a checkpoint, with the schedule and frame rate it was
/// trained with.
pub struct LoadedModel {
    pub model: DanceDenoiser,
    pub schedule: NoiseSchedule,
    pub fps: f64,
    pub step: u64,
}

pub fn load_model(path: &Path) -> Result<LoadedModel> {
    if !path.is_file() {
        return Err(CliError::missing(path.to_path_buf()));
    }
    let ckpt = load_checkpoint(path)?;
    let field = |key: &str| -> Result<f64> {
        ckpt.extra(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CliError::Data(format!("{}: missing or bad run.{key}", path.display())))
    };
    let steps = field(RUN_DIFFUSION_STEPS)? as usize;
    let fps = field(RUN_FPS)?;
    Ok(LoadedModel { model: ckpt.state.ema_model(), schedule: cosine_schedule(steps)?, fps, step: ckpt.state.step })
}

/// Up to `keep` leading rows of a feature file at `fps`, checked against
/// the model's conditioning width and a minimum of `frames` rows.
pub(crate) fn load_conditioning(path: &Path, fps: f64, cond_dim: usize, frames: usize, keep: usize) -> Result<Array2<f64>> {
    if !path.is_file() {
        return Err(CliError::missing(path.to_path_buf()));
    }
    let cond = load_precomputed(path, fps, true)?;
    if cond.dim() != cond_dim {
        return Err(CliError::Data(format!(
            "{}: features are {} wide but the checkpoint expects {cond_dim}",
            path.display(),
            cond.dim()
        )));
    }
    if cond.frames() < frames {
        return Err(CliError::Data(format!(
            "{}: {} frames of features, need at least {frames}",
            path.display(),
            cond.frames()
        )));
    }
    Ok(cond.features.slice(s![..keep.min(cond.frames()), ..]).to_owned())
}

/// `.motion` files of a directory, sorted by name.
pub(crate) fn motion_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "motion"))
        .collect();
    files.sort();
    Ok(files)
}

pub(crate) fn read_motion(path: &Path) -> Result<MotionFile> {
    Ok(MotionFile::read(path)?)
}
