//! Music conditioning: WAV ingestion, baseline per-frame features, beat
//! tracking and precomputed-feature loading.

mod beats;
mod features;
mod spectral;
mod wav;

pub use beats::{detect_beats, onset_envelope, BEAT_ENVELOPE_RATE};
pub use features::{
    baseline_beat_times, extract_baseline_features, load_precomputed, resample_linear, BaselineFeatures, BASELINE_BEAT_COLUMN,
    BASELINE_DIM,
};
pub use spectral::{chroma_bin, hz_to_mel, mel_filterbank, mel_to_hz, N_CHROMA, N_MELS, N_MFCC};
pub use wav::{read_wav, write_wav};

use std::path::PathBuf;

use ndarray::Array2;
use thiserror::Error;

use crate::formats::{FeatureFile, FormatError};

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("audio buffer is empty")]
    EmptyAudio,
    #[error("audio too short: need {needed:.3} s, got {got:.3} s")]
    TooShort { needed: f64, got: f64 },
    #[error("no tempo found: onset envelope is flat")]
    NoTempoFound,
    #[error("invalid audio: {0}")]
    InvalidAudio(String),
    #[error("{path}: unsupported or malformed wave file: {message}")]
    BadWav { path: PathBuf, message: String },
    #[error("feature file is at {file} fps, {requested} fps requested and resampling is disabled")]
    FpsMismatch { file: f64, requested: f64 },
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Mono samples in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidAudio("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !(s.is_finite() && s.abs() <= 1.0)) {
            return Err(AudioError::InvalidAudio(format!("sample {i} is {} (must be finite, in [-1, 1])", samples[i])));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Samples divided by the peak magnitude; all zeros stay zeros.
    pub(crate) fn peak_normalized(&self) -> Vec<f64> {
        let peak = self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        if peak == 0.0 {
            return self.samples.clone();
        }
        self.samples.iter().map(|s| s / peak).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureSource {
    Baseline,
    Precomputed,
}

impl FeatureSource {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSource::Baseline => "baseline",
            FeatureSource::Precomputed => "precomputed",
        }
    }
}

/// Per-frame music features, `N × D`, aligned to motion frames.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningSequence {
    pub features: Array2<f64>,
    pub fps: f64,
    pub source: FeatureSource,
}

impl ConditioningSequence {
    pub fn frames(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn to_file(&self) -> FeatureFile {
        FeatureFile { features: self.features.clone(), fps: self.fps, source: self.source.as_str().to_string() }
    }
}

/// Beat times in seconds, strictly increasing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BeatGrid {
    pub beat_times: Vec<f64>,
    /// `None` when no tempo could be estimated.
    pub tempo_bpm: Option<f64>,
}

impl BeatGrid {
    pub fn is_empty(&self) -> bool {
        self.beat_times.is_empty()
    }

    /// Frame index containing each beat, `⌊τ·fps⌋`, deduplicated.
    pub fn frames(&self, fps: f64) -> Vec<usize> {
        let mut out: Vec<usize> = self.beat_times.iter().map(|t| (t * fps).floor().max(0.0) as usize).collect();
        out.dedup();
        out
    }
}
