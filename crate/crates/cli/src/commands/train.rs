use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use motiondiff::audio::load_precomputed;
use motiondiff::diffusion::cosine_schedule;
use motiondiff::formats::{DatasetManifest, MotionFile, Split};
use motiondiff::model::{
    load_checkpoint, save_checkpoint, train_step, DanceDenoiser, ModelError, StepReport, TrainState, TrainingExample,
};
use motiondiff::rng::SeedStream;
use ndarray::s;
use rand::Rng as _;

use super::{create_dir, out_dir, RUN_DIFFUSION_STEPS, RUN_FPS};
use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const LOSS_LOG: &str = "loss.log";
const LOSS_HEADER: &str = "# step total simple joint vel contact lr";
/// Seed-stream tags.
const INIT_STREAM: u64 = 0;
const STEP_STREAM: u64 = 1;

/// One row of the loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub step: u64,
    pub total: f64,
    pub simple: f64,
    pub joint: f64,
    pub vel: f64,
    pub contact: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    /// Checkpoints written by this run, in step order.
    pub checkpoints: Vec<PathBuf>,
    pub log: PathBuf,
    pub final_step: u64,
}

pub fn checkpoint_name(step: u64) -> String {
    format!("ckpt_{step:06}.ckpt")
}

/// Windows of `seq_len` frames with stride `window_stride` from every
/// training pair; features are resampled to the motion rate and truncated
/// to the motion length.
fn load_windows(cfg: &RunConfig, manifest: &DatasetManifest) -> Result<Vec<TrainingExample>> {
    let n = cfg.seq_len;
    let stride = cfg.window_stride();
    let skel_joints = cfg.load_skeleton()?.joint_count();
    let mut windows = Vec::new();
    for entry in manifest.split(Split::Train) {
        let motion = MotionFile::read(&entry.motion)?;
        let clip = &motion.clip;
        if clip.fps() != cfg.fps {
            return Err(CliError::Data(format!(
                "{}: motion is at {} fps, config asks for {}",
                entry.motion.display(),
                clip.fps(),
                cfg.fps
            )));
        }
        if clip.layout().joints() != skel_joints {
            return Err(CliError::Data(format!(
                "{}: {} joints, skeleton has {skel_joints}",
                entry.motion.display(),
                clip.layout().joints()
            )));
        }
        let cond = load_precomputed(&entry.features, cfg.fps, true)?;
        let frames = clip.frames();
        if cond.frames() < frames {
            return Err(CliError::Data(format!(
                "{}: {} feature frames for a {frames}-frame motion",
                entry.features.display(),
                cond.frames()
            )));
        }
        let mut start = 0;
        while start + n <= frames {
            windows.push(TrainingExample {
                motion: clip.data().slice(s![start..start + n, ..]).to_owned(),
                cond: cond.features.slice(s![start..start + n, ..]).to_owned(),
            });
            start += stride;
        }
    }
    if windows.is_empty() {
        return Err(CliError::Data(format!("no training clip has at least {n} frames")));
    }
    if let Some(w) = windows.iter().find(|w| w.cond.ncols() != windows[0].cond.ncols()) {
        return Err(CliError::Data(format!(
            "feature widths differ across clips: {} and {}",
            windows[0].cond.ncols(),
            w.cond.ncols()
        )));
    }
    Ok(windows)
}

fn format_row(r: &LossRow) -> String {
    format!("{} {} {} {} {} {} {}", r.step, r.total, r.simple, r.joint, r.vel, r.contact, r.lr)
}

pub fn read_loss_log(path: &Path) -> Result<Vec<LossRow>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let v: Vec<&str> = l.split_whitespace().collect();
            let bad = || CliError::Data(format!("{}: bad row `{l}`", path.display()));
            if v.len() != 7 {
                return Err(bad());
            }
            let f = |i: usize| v[i].parse::<f64>().map_err(|_| bad());
            Ok(LossRow {
                step: v[0].parse().map_err(|_| bad())?,
                total: f(1)?,
                simple: f(2)?,
                joint: f(3)?,
                vel: f(4)?,
                contact: f(5)?,
                lr: f(6)?,
            })
        })
        .collect()
}

/// Log text to resume from: rows up to and including `step`.
fn resumed_log(path: &Path, step: u64) -> Result<String> {
    let mut text = format!("{LOSS_HEADER}\n");
    if path.is_file() {
        for row in read_loss_log(path)?.into_iter().filter(|r| r.step <= step) {
            writeln!(text, "{}", format_row(&row)).unwrap();
        }
    }
    Ok(text)
}

fn run_extra(cfg: &RunConfig) -> Vec<(String, String)> {
    let mut extra = vec![
        (RUN_DIFFUSION_STEPS.to_string(), cfg.diffusion_steps.to_string()),
        (RUN_FPS.to_string(), cfg.fps.to_string()),
    ];
    extra.extend(
        cfg.pairs()
            .into_iter()
            .filter(|(k, _)| !matches!(k.as_str(), "out" | "diffusion_steps" | "fps"))
            .map(|(k, v)| (format!("config.{k}"), v)),
    );
    extra
}

/// Trains on the train split of the manifest until `train_steps`.
///
/// Step `s` draws its batch and noise from its own stream, so a resumed run
/// sees the same data as an uninterrupted one. Checkpoints hold the EMA
/// weights and optimizer state; the log gets one row per executed step. A
/// non-finite loss stops training after checkpointing the last good state.
pub fn train(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainOutput> {
    let out = out_dir(cfg)?;
    let manifest_path =
        cfg.manifest.as_deref().ok_or_else(|| CliError::Config("no manifest: pass --manifest or set `manifest`".into()))?;
    if !manifest_path.is_file() {
        return Err(CliError::missing(manifest_path.to_path_buf()));
    }
    let skel = cfg.load_skeleton()?;
    let sched = cosine_schedule(cfg.diffusion_steps)?;
    let manifest = DatasetManifest::read(manifest_path)?;
    let windows = load_windows(cfg, &manifest)?;
    let model_cfg = cfg.model_config(windows[0].cond.ncols());
    model_cfg.validate()?;
    let seeds = SeedStream::new(cfg.seed);

    let mut state = match resume {
        None => {
            let model = DanceDenoiser::new(model_cfg, &mut seeds.child(INIT_STREAM).rng(0))?;
            TrainState::with_schedule(model, cfg.optimizer, cfg.lr_schedule())
        }
        Some(path) => {
            if !path.is_file() {
                return Err(CliError::missing(path.to_path_buf()));
            }
            let ckpt = load_checkpoint(path)?;
            if ckpt.state.model.config() != &model_cfg {
                return Err(CliError::Config(format!(
                    "{}: model config {:?} differs from the requested {:?}",
                    path.display(),
                    ckpt.state.model.config(),
                    model_cfg
                )));
            }
            let mut state = ckpt.state;
            state.schedule = cfg.lr_schedule();
            state
        }
    };

    create_dir(out)?;
    fs::write(out.join("config.txt"), cfg.to_text()).map_err(|e| CliError::io(out, e))?;
    let log_path = out.join(LOSS_LOG);
    let mut log = resumed_log(&log_path, state.step)?;
    let extra = run_extra(cfg);
    let mut checkpoints = Vec::new();
    let save = |state: &TrainState, log: &str, checkpoints: &mut Vec<PathBuf>| -> Result<()> {
        let path = out.join(checkpoint_name(state.step));
        save_checkpoint(&path, state, &extra)?;
        fs::write(&log_path, log).map_err(|e| CliError::io(&log_path, e))?;
        checkpoints.push(path);
        Ok(())
    };

    let step_seeds = seeds.child(STEP_STREAM);
    while state.step < cfg.train_steps {
        let mut rng = step_seeds.rng(state.step);
        let batch: Vec<TrainingExample> =
            (0..cfg.batch_size).map(|_| windows[rng.random_range(0..windows.len())].clone()).collect();
        let report: StepReport = match train_step(&mut state, &batch, &skel, &sched, &cfg.loss_weights(), &mut rng) {
            Ok(r) => r,
            Err(e @ ModelError::NonFiniteLoss { .. }) => {
                save(&state, &log, &mut checkpoints)?;
                return Err(e.into());
            }
            Err(e) => return Err(e.into()),
        };
        let l = report.loss;
        let row = LossRow {
            step: report.step,
            total: l.total,
            simple: l.simple,
            joint: l.joint,
            vel: l.vel,
            contact: l.contact,
            lr: state.optimizer.lr(),
        };
        writeln!(log, "{}", format_row(&row)).unwrap();
        if state.step % cfg.checkpoint_every == 0 || state.step == cfg.train_steps {
            save(&state, &log, &mut checkpoints)?;
            eprintln!("step {} loss {:.4e}", state.step, l.total);
        }
    }
    if checkpoints.is_empty() {
        save(&state, &log, &mut checkpoints)?;
    }
    Ok(TrainOutput { checkpoints, log: log_path, final_step: state.step })
}
