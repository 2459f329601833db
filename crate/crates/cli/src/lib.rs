//! Command-line pipeline: synthetic data, training, sampling, editing,
//! long-form generation and evaluation.
//!
//! Every command resolves its [`RunConfig`] from a preset, an optional
//! config file, `--set key=value` overrides and the common flags, in that
//! order, and validates it before writing anything.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "motiondiff", version, about = "Music-conditioned dance generation with diffusion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Default, Args)]
pub struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in preset applied before the config file: desk, overfit or paper.
    #[arg(long)]
    pub preset: Option<String>,
    /// Override a single config key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub fps: Option<u32>,
}

impl Common {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::preset(self.preset.as_deref().unwrap_or("desk"))?;
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = Some(out.clone());
        }
        if let Some(fps) = self.fps {
            cfg.fps = fps as f64;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Procedural beat-locked clips, their click tracks, features and a manifest.
    SynthData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Train a denoiser, writing checkpoints and a loss log.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Total optimizer steps (overrides `train_steps`).
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from a checkpoint; the step counter carries on.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Draw clips conditioned on a feature file.
    Sample {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelInput,
        #[arg(long)]
        count: Option<usize>,
        /// Sample every clip-length window of the features, `window_stride`
        /// apart, instead of only the first.
        #[arg(long)]
        windows: bool,
    },
    /// Constrained sampling: in-betweening, joint masks and keyframes.
    Edit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelInput,
        /// Constraint file with mask and known values.
        #[arg(long, conflicts_with = "mask")]
        constraint: Option<PathBuf>,
        /// Motion file the mask takes its known values from.
        #[arg(long, requires = "mask")]
        reference: Option<PathBuf>,
        /// none, lower-body, upper-body, inbetween:N, continuation:N or keyframes:I,J,...
        #[arg(long, requires = "reference")]
        mask: Option<String>,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Arbitrary-length generation from half-overlapping clips.
    Longform {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelInput,
        #[arg(long)]
        seconds: Option<f64>,
        /// Also write every slice before blending.
        #[arg(long)]
        keep_slices: bool,
    },
    /// Metrics report for a directory of motion files.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory of `.motion` files to score.
        #[arg(long)]
        motions: Option<PathBuf>,
        /// Directory of `.wav` or `.features` files named like the motions.
        #[arg(long)]
        music: Option<PathBuf>,
        /// Directory of reference motions for Frechet distances.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Checkpoint directory to sweep: sample every checkpoint and score it.
        #[arg(long)]
        sweep: Option<PathBuf>,
        /// Conditioning for sweep samples.
        #[arg(long)]
        features: Option<PathBuf>,
        /// Also write CSV tables.
        #[arg(long)]
        csv: bool,
    },
}

#[derive(Clone, Debug, Args)]
pub struct ModelInput {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Conditioning feature file; resampled to the checkpoint's frame rate.
    #[arg(long)]
    pub features: PathBuf,
    /// Guidance weight (overrides `guidance_weight`).
    #[arg(long)]
    pub guidance: Option<f64>,
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData { common, count, frames } => {
            let mut cfg = common.resolve()?;
            cfg.synth_count = count.unwrap_or(cfg.synth_count);
            cfg.synth_frames = frames.unwrap_or(cfg.synth_frames);
            cfg.validate()?;
            commands::synth_data(&cfg).map(|_| ())
        }
        Command::Train { common, manifest, steps, resume } => {
            let mut cfg = common.resolve()?;
            if manifest.is_some() {
                cfg.manifest = manifest;
            }
            cfg.train_steps = steps.unwrap_or(cfg.train_steps);
            cfg.validate()?;
            commands::train(&cfg, resume.as_deref()).map(|_| ())
        }
        Command::Sample { common, model, count, windows } => {
            let cfg = sampling_config(&common, &model, count)?;
            let draw = if windows { commands::sample_windows } else { commands::sample };
            draw(&cfg, &model.checkpoint, &model.features).map(|_| ())
        }
        Command::Edit { common, model, constraint, reference, mask, count } => {
            let cfg = sampling_config(&common, &model, count)?;
            let source = match (constraint, reference, mask) {
                (Some(path), _, _) => commands::ConstraintSource::File(path),
                (None, Some(reference), Some(mask)) => commands::ConstraintSource::Mask { reference, mask },
                _ => return Err(CliError::Config("edit needs --constraint or --reference with --mask".into())),
            };
            commands::edit(&cfg, &model.checkpoint, &model.features, &source).map(|_| ())
        }
        Command::Longform { common, model, seconds, keep_slices } => {
            let mut cfg = sampling_config(&common, &model, None)?;
            cfg.total_seconds = seconds.unwrap_or(cfg.total_seconds);
            cfg.validate()?;
            commands::longform(&cfg, &model.checkpoint, &model.features, keep_slices).map(|_| ())
        }
        Command::Evaluate { common, motions, music, reference, sweep, features, csv } => {
            let cfg = common.resolve()?;
            let opts = commands::EvaluateInputs { motions, music, reference, sweep, features, csv };
            commands::evaluate(&cfg, &opts).map(|_| ())
        }
    }
}

fn sampling_config(common: &Common, model: &ModelInput, count: Option<usize>) -> Result<RunConfig> {
    let mut cfg = common.resolve()?;
    cfg.guidance_weight = model.guidance.unwrap_or(cfg.guidance_weight);
    cfg.samples = count.unwrap_or(cfg.samples);
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
struct Guide;
