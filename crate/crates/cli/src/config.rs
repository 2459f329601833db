//! Flat `key = value` run configuration.
//!
//! A config file holds one `key = value` pair per line; `#` starts a
//! comment. Every key is checked against [`KEYS`] and every value parsed and
//! range-checked before a command touches the file system.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use motiondiff::diffusion::SamplerConfig;
use motiondiff::kinematics::{Skeleton, SMPL_POSE_DIM};
use motiondiff::metrics::{FootReduction, PfcOptions};
use motiondiff::model::{LossWeights, LrSchedule, ModelConfig, OptimizerKind};

use crate::error::{CliError, Result};

/// Accepted keys with a one-line description each.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "root seed for every random stream"),
    ("fps", "motion frame rate"),
    ("out", "output directory"),
    ("skeleton", "skeleton file (default: built-in SMPL)"),
    ("manifest", "dataset manifest for training"),
    ("layers", "transformer decoder layers"),
    ("heads", "attention heads"),
    ("model_dim", "residual stream width"),
    ("mlp_dim", "feed-forward hidden width"),
    ("dropout", "dropout on attention and feed-forward outputs"),
    ("seq_len", "clip length N in frames"),
    ("cond_dropout_prob", "probability of training on the null condition"),
    ("ema_decay", "EMA decay of the sampling weights"),
    ("lambda_pos", "joint position loss weight"),
    ("lambda_vel", "velocity loss weight"),
    ("lambda_contact", "contact consistency loss weight"),
    ("diffusion_steps", "number of diffusion steps T"),
    ("optimizer", "adan or adam"),
    ("lr", "peak learning rate"),
    ("lr_schedule", "cosine or constant"),
    ("lr_floor", "final learning rate of the cosine schedule"),
    ("lr_warmup", "linear warmup steps of the cosine schedule"),
    ("train_steps", "total optimizer steps"),
    ("batch_size", "clips per step"),
    ("window_stride", "stride of training windows in frames (0: N/2)"),
    ("checkpoint_every", "steps between checkpoints"),
    ("guidance_weight", "classifier-free guidance weight w"),
    ("guidance_dropout", "fraction of the noisiest steps sampled unguided (default: 0.4 if w <= 1, else 0)"),
    ("samples", "clips drawn per sample or sweep checkpoint"),
    ("synth_count", "clips generated by synth-data"),
    ("synth_frames", "frames per synthetic clip"),
    ("bpm_min", "slowest synthetic tempo"),
    ("bpm_max", "fastest synthetic tempo"),
    ("sample_rate", "synthetic audio sample rate"),
    ("test_fraction", "share of synthetic clips in the test split"),
    ("sigma_frames", "beat alignment Gaussian width in frames"),
    ("foot_reduction", "heel/toe speed reduction for PFC: mean or min"),
    ("horizontal_foot_speed", "PFC uses horizontal foot speed only"),
    ("total_seconds", "length of long-form generation"),
];

/// Every setting of every command, with defaults from the `desk` preset.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub fps: f64,
    pub out: Option<PathBuf>,
    pub skeleton: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub mlp_dim: usize,
    pub dropout: f64,
    pub seq_len: usize,
    pub cond_dropout_prob: f64,
    pub ema_decay: f64,
    pub lambda_pos: f64,
    pub lambda_vel: f64,
    pub lambda_contact: f64,
    pub diffusion_steps: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub lr_schedule: String,
    pub lr_floor: f64,
    pub lr_warmup: u64,
    pub train_steps: u64,
    pub batch_size: usize,
    pub window_stride: usize,
    pub checkpoint_every: u64,
    pub guidance_weight: f64,
    pub guidance_dropout: Option<f64>,
    pub samples: usize,
    pub synth_count: usize,
    pub synth_frames: usize,
    pub bpm_min: f64,
    pub bpm_max: f64,
    pub sample_rate: u32,
    pub test_fraction: f64,
    pub sigma_frames: f64,
    pub foot_reduction: FootReduction,
    pub horizontal_foot_speed: bool,
    pub total_seconds: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            fps: 30.0,
            out: None,
            skeleton: None,
            manifest: None,
            layers: 2,
            heads: 4,
            model_dim: 64,
            mlp_dim: 128,
            dropout: 0.1,
            seq_len: 60,
            cond_dropout_prob: 0.25,
            ema_decay: 0.999,
            lambda_pos: 1.0,
            lambda_vel: 1.0,
            lambda_contact: 1.0,
            diffusion_steps: 50,
            optimizer: OptimizerKind::Adan,
            lr: 1e-3,
            lr_schedule: "cosine".into(),
            lr_floor: 1e-5,
            lr_warmup: 100,
            train_steps: 2000,
            batch_size: 4,
            window_stride: 0,
            checkpoint_every: 500,
            guidance_weight: 2.0,
            guidance_dropout: None,
            samples: 1,
            synth_count: 10,
            synth_frames: 150,
            bpm_min: 90.0,
            bpm_max: 150.0,
            sample_rate: 22050,
            test_fraction: 0.2,
            sigma_frames: motiondiff::metrics::DEFAULT_SIGMA_FRAMES,
            foot_reduction: FootReduction::Mean,
            horizontal_foot_speed: false,
            total_seconds: 12.5,
        }
    }
}

/// Built-in presets selectable with `--preset`.
pub const PRESETS: &[(&str, &str)] = &[
    ("desk", ""),
    ("overfit", include_str!("../presets/overfit.cfg")),
    ("paper", include_str!("../presets/paper.cfg")),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| CliError::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::Config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| CliError::Config(format!("unknown preset `{name}`")))?;
        let mut cfg = Self::default();
        cfg.apply_text(text, Path::new(name))?;
        Ok(cfg)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "fps" => self.fps = parse(key, v)?,
            "out" => self.out = Some(PathBuf::from(v)),
            "skeleton" => self.skeleton = Some(PathBuf::from(v)),
            "manifest" => self.manifest = Some(PathBuf::from(v)),
            "layers" => self.layers = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "model_dim" => self.model_dim = parse(key, v)?,
            "mlp_dim" => self.mlp_dim = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "seq_len" => self.seq_len = parse(key, v)?,
            "cond_dropout_prob" => self.cond_dropout_prob = parse(key, v)?,
            "ema_decay" => self.ema_decay = parse(key, v)?,
            "lambda_pos" => self.lambda_pos = parse(key, v)?,
            "lambda_vel" => self.lambda_vel = parse(key, v)?,
            "lambda_contact" => self.lambda_contact = parse(key, v)?,
            "diffusion_steps" => self.diffusion_steps = parse(key, v)?,
            "optimizer" => {
                self.optimizer = OptimizerKind::parse(v)
                    .ok_or_else(|| CliError::Config(format!("`optimizer`: expected adan or adam, got `{v}`")))?
            }
            "lr" => self.lr = parse(key, v)?,
            "lr_schedule" => self.lr_schedule = v.to_string(),
            "lr_floor" => self.lr_floor = parse(key, v)?,
            "lr_warmup" => self.lr_warmup = parse(key, v)?,
            "train_steps" => self.train_steps = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "window_stride" => self.window_stride = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "guidance_weight" => self.guidance_weight = parse(key, v)?,
            "guidance_dropout" => self.guidance_dropout = Some(parse(key, v)?),
            "samples" => self.samples = parse(key, v)?,
            "synth_count" => self.synth_count = parse(key, v)?,
            "synth_frames" => self.synth_frames = parse(key, v)?,
            "bpm_min" => self.bpm_min = parse(key, v)?,
            "bpm_max" => self.bpm_max = parse(key, v)?,
            "sample_rate" => self.sample_rate = parse(key, v)?,
            "test_fraction" => self.test_fraction = parse(key, v)?,
            "sigma_frames" => self.sigma_frames = parse(key, v)?,
            "foot_reduction" => {
                self.foot_reduction = match v {
                    "mean" => FootReduction::Mean,
                    "min" => FootReduction::Min,
                    _ => return Err(CliError::Config(format!("`foot_reduction`: expected mean or min, got `{v}`"))),
                }
            }
            "horizontal_foot_speed" => self.horizontal_foot_speed = parse_bool(key, v)?,
            "total_seconds" => self.total_seconds = parse(key, v)?,
            _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("{}:{}: expected `key = value`, got `{line}`", origin.display(), n + 1))
            })?;
            self.set(key.trim(), value)
                .map_err(|e| CliError::Config(format!("{}:{}: {}", origin.display(), n + 1, e.message())))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        self.apply_text(&text, path)
    }

    /// Current values as `(key, value)` pairs in [`KEYS`] order; unset
    /// optional keys are omitted.
    pub fn pairs(&self) -> Vec<(String, String)> {
        fn s(v: impl Display) -> Option<String> {
            Some(v.to_string())
        }
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        KEYS.iter()
            .filter_map(|(key, _)| {
                let value = match *key {
                    "seed" => s(self.seed),
                    "fps" => s(self.fps),
                    "out" => path(&self.out),
                    "skeleton" => path(&self.skeleton),
                    "manifest" => path(&self.manifest),
                    "layers" => s(self.layers),
                    "heads" => s(self.heads),
                    "model_dim" => s(self.model_dim),
                    "mlp_dim" => s(self.mlp_dim),
                    "dropout" => s(self.dropout),
                    "seq_len" => s(self.seq_len),
                    "cond_dropout_prob" => s(self.cond_dropout_prob),
                    "ema_decay" => s(self.ema_decay),
                    "lambda_pos" => s(self.lambda_pos),
                    "lambda_vel" => s(self.lambda_vel),
                    "lambda_contact" => s(self.lambda_contact),
                    "diffusion_steps" => s(self.diffusion_steps),
                    "optimizer" => s(self.optimizer.as_str()),
                    "lr" => s(self.lr),
                    "lr_schedule" => s(&self.lr_schedule),
                    "lr_floor" => s(self.lr_floor),
                    "lr_warmup" => s(self.lr_warmup),
                    "train_steps" => s(self.train_steps),
                    "batch_size" => s(self.batch_size),
                    "window_stride" => s(self.window_stride),
                    "checkpoint_every" => s(self.checkpoint_every),
                    "guidance_weight" => s(self.guidance_weight),
                    "guidance_dropout" => self.guidance_dropout.map(|v| v.to_string()),
                    "samples" => s(self.samples),
                    "synth_count" => s(self.synth_count),
                    "synth_frames" => s(self.synth_frames),
                    "bpm_min" => s(self.bpm_min),
                    "bpm_max" => s(self.bpm_max),
                    "sample_rate" => s(self.sample_rate),
                    "test_fraction" => s(self.test_fraction),
                    "sigma_frames" => s(self.sigma_frames),
                    "foot_reduction" => s(match self.foot_reduction {
                        FootReduction::Mean => "mean",
                        FootReduction::Min => "min",
                    }),
                    "horizontal_foot_speed" => s(self.horizontal_foot_speed),
                    "total_seconds" => s(self.total_seconds),
                    _ => unreachable!("every key in KEYS is handled"),
                };
                value.map(|v| (key.to_string(), v))
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        self.pairs().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Range and consistency checks shared by all commands.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad(format!("`fps` must be positive, got {}", self.fps));
        }
        self.model_config(1).validate()?;
        self.loss_weights().validate()?;
        if self.diffusion_steps == 0 {
            return bad("`diffusion_steps` must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("`lr` must be positive, got {}", self.lr));
        }
        match self.lr_schedule.as_str() {
            "constant" => {}
            "cosine" => {
                if !(self.lr_floor >= 0.0 && self.lr_floor <= self.lr) {
                    return bad(format!("`lr_floor` must lie in [0, lr], got {}", self.lr_floor));
                }
            }
            other => return bad(format!("`lr_schedule`: expected cosine or constant, got `{other}`")),
        }
        if self.batch_size == 0 {
            return bad("`batch_size` must be at least 1".into());
        }
        if self.checkpoint_every == 0 {
            return bad("`checkpoint_every` must be at least 1".into());
        }
        if self.window_stride > self.seq_len {
            return bad(format!("`window_stride` {} exceeds `seq_len` {}", self.window_stride, self.seq_len));
        }
        self.sampler_config().validate()?;
        if self.samples == 0 {
            return bad("`samples` must be at least 1".into());
        }
        if self.synth_frames < 3 {
            return bad(format!("`synth_frames` must be at least 3, got {}", self.synth_frames));
        }
        if !(self.bpm_min > 0.0 && self.bpm_min <= self.bpm_max && self.bpm_max.is_finite()) {
            return bad(format!("tempo range [{}, {}] is not valid", self.bpm_min, self.bpm_max));
        }
        if self.sample_rate < 4000 {
            return bad(format!("`sample_rate` must be at least 4000, got {}", self.sample_rate));
        }
        if !(0.0..=1.0).contains(&self.test_fraction) {
            return bad(format!("`test_fraction` must lie in [0, 1], got {}", self.test_fraction));
        }
        if !(self.sigma_frames > 0.0 && self.sigma_frames.is_finite()) {
            return bad(format!("`sigma_frames` must be positive, got {}", self.sigma_frames));
        }
        if !(self.total_seconds > 0.0 && self.total_seconds.is_finite()) {
            return bad(format!("`total_seconds` must be positive, got {}", self.total_seconds));
        }
        Ok(())
    }

    pub fn model_config(&self, cond_dim: usize) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            heads: self.heads,
            model_dim: self.model_dim,
            mlp_dim: self.mlp_dim,
            dropout: self.dropout,
            cond_dim,
            seq_len: self.seq_len,
            pose_dim: SMPL_POSE_DIM,
            cond_dropout_prob: self.cond_dropout_prob,
            ema_decay: self.ema_decay,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { pos: self.lambda_pos, vel: self.lambda_vel, contact: self.lambda_contact }
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        match self.lr_schedule.as_str() {
            "cosine" => LrSchedule::Cosine {
                peak: self.lr,
                floor: self.lr_floor,
                warmup: self.lr_warmup,
                total: self.train_steps.max(1),
            },
            _ => LrSchedule::Constant(self.lr),
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        let cfg = SamplerConfig::new(self.guidance_weight, self.seed);
        match self.guidance_dropout {
            Some(f) => cfg.with_dropout(f),
            None => cfg,
        }
    }

    pub fn pfc_options(&self) -> PfcOptions {
        PfcOptions { foot_reduction: self.foot_reduction, horizontal_foot_speed: self.horizontal_foot_speed }
    }

    pub fn load_skeleton(&self) -> Result<Skeleton> {
        match &self.skeleton {
            None => Ok(Skeleton::smpl()),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                Skeleton::parse(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
            }
        }
    }

    pub fn window_stride(&self) -> usize {
        if self.window_stride == 0 {
            (self.seq_len / 2).max(1)
        } else {
            self.window_stride
        }
    }
}

impl CliError {
    fn message(&self) -> String {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Numeric(m) => m.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::preset("overfit").unwrap();
        cfg.guidance_dropout = Some(0.1);
        cfg.out = Some("runs/a".into());
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text(), Path::new("x")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn every_key_is_settable_and_listed() {
        let cfg = RunConfig { out: Some("o".into()), skeleton: Some("s".into()), manifest: Some("m".into()), guidance_dropout: Some(0.0), ..RunConfig::default() };
        let keys: Vec<String> = cfg.pairs().into_iter().map(|(k, _)| k).collect();
        assert_eq!(keys.len(), KEYS.len());
        for (k, v) in cfg.pairs() {
            RunConfig::default().set(&k, &v).unwrap();
        }
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply_text("layers = 2\nlayres = 3\n", Path::new("c.cfg")).unwrap_err();
        assert!(matches!(&err, CliError::Config(m) if m.contains("c.cfg:2") && m.contains("layres")));
        assert!(cfg.apply_text("heads = four", Path::new("c")).is_err());
        assert!(cfg.apply_text("no equals sign", Path::new("c")).is_err());
        for (k, v) in [("heads", "3"), ("lr", "0"), ("lr_schedule", "step"), ("test_fraction", "2"), ("guidance_dropout", "1")] {
            let mut c = RunConfig::default();
            c.set(k, v).unwrap();
            assert!(matches!(c.validate(), Err(CliError::Config(_))), "{k} = {v}");
        }
        assert!(RunConfig::default().validate().is_ok());
        for (name, _) in PRESETS {
            RunConfig::preset(name).unwrap().validate().unwrap();
        }
    }
}
