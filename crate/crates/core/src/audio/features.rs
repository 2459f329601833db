//! Baseline per-frame features and precomputed-feature ingestion.

use std::path::Path;

use ndarray::{s, Array1, Array2};

use super::beats::{detect_beats, onset_envelope};
use super::spectral::{chroma, dct_rows, log_mel, mel_filterbank, power_frames, N_CHROMA, N_MELS, N_MFCC};
use super::{AudioBuffer, AudioError, BeatGrid, ConditioningSequence, FeatureSource};
use crate::formats::FeatureFile;

/// Envelope, MFCCs, chroma, beat one-hot, onset-peak one-hot.
pub const BASELINE_DIM: usize = 1 + N_MFCC + N_CHROMA + 2;

const COL_MFCC: usize = 1;
const COL_CHROMA: usize = COL_MFCC + N_MFCC;
const COL_BEAT: usize = COL_CHROMA + N_CHROMA;
/// Column of the beat one-hot in baseline features.
pub const BASELINE_BEAT_COLUMN: usize = COL_BEAT;
const COL_PEAK: usize = COL_BEAT + 1;
/// Minimum normalized envelope height for an onset peak.
const PEAK_THRESHOLD: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineFeatures {
    pub conditioning: ConditioningSequence,
    pub beats: BeatGrid,
}

/// Per-frame features at `fps`: frame `i` describes audio up to the end of
/// `[i/fps, (i+1)/fps)`. Columns are the onset envelope (peak 1), 20 MFCCs
/// of the log-mel spectrogram scaled to `[-1, 0]`, 12 chroma energy
/// fractions, a beat one-hot and an onset-peak one-hot.
///
/// Beats come from [`detect_beats`]; audio shorter than its minimum
/// duration, or without a detectable tempo, yields an empty grid.
pub fn extract_baseline_features(audio: &AudioBuffer, fps: f64) -> Result<BaselineFeatures, AudioError> {
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(AudioError::InvalidAudio(format!("fps must be positive, got {fps}")));
    }
    if audio.samples().is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    let sr = audio.sample_rate();
    let hop = (sr as f64 / fps).round().max(1.0) as usize;
    let frames = audio.samples().len() / hop;
    if frames == 0 {
        return Err(AudioError::TooShort { needed: 1.0 / fps, got: audio.duration() });
    }
    let n_fft = hop.next_power_of_two().max(1024);
    let samples = audio.peak_normalized();
    let power = power_frames(&samples, hop, n_fft, frames);
    let mel = log_mel(&power, &mel_filterbank(sr, n_fft, N_MELS));
    let envelope = onset_envelope(audio, fps, n_fft)?;

    let beats = match detect_beats(audio) {
        Ok(grid) => grid,
        Err(AudioError::TooShort { .. } | AudioError::NoTempoFound) => BeatGrid::default(),
        Err(e) => return Err(e),
    };

    let mut f = Array2::zeros((frames, BASELINE_DIM));
    f.column_mut(0).assign(&envelope);
    f.slice_mut(s![.., COL_MFCC..COL_CHROMA]).assign(&dct_rows(&mel, N_MFCC));
    f.slice_mut(s![.., COL_CHROMA..COL_BEAT]).assign(&chroma(&power, sr, n_fft));
    for i in beats.frames(fps).into_iter().filter(|&i| i < frames) {
        f[[i, COL_BEAT]] = 1.0;
    }
    for i in onset_peaks(&envelope) {
        f[[i, COL_PEAK]] = 1.0;
    }
    Ok(BaselineFeatures {
        conditioning: ConditioningSequence { features: f, fps, source: FeatureSource::Baseline },
        beats,
    })
}

/// Beat times recovered from the one-hot column of baseline features, each
/// at the middle of its frame. `None` when `features` is not
/// [`BASELINE_DIM`] wide.
pub fn baseline_beat_times(features: &Array2<f64>, fps: f64) -> Option<Vec<f64>> {
    (features.ncols() == BASELINE_DIM).then(|| {
        (0..features.nrows()).filter(|&i| features[[i, COL_BEAT]] > 0.5).map(|i| (i as f64 + 0.5) / fps).collect()
    })
}

fn onset_peaks(env: &Array1<f64>) -> Vec<usize> {
    let n = env.len();
    (0..n)
        .filter(|&i| {
            env[i] >= PEAK_THRESHOLD && (i == 0 || env[i] > env[i - 1]) && (i + 1 == n || env[i] >= env[i + 1])
        })
        .collect()
}

/// Resamples rows from `from_fps` to `to_fps` by linear interpolation in
/// time. Output frame `j` sits at `j/to_fps`; frames past the last input
/// time are dropped.
pub fn resample_linear(features: &Array2<f64>, from_fps: f64, to_fps: f64) -> Array2<f64> {
    let n = features.nrows();
    if n == 0 || from_fps == to_fps {
        return features.clone();
    }
    let ratio = from_fps / to_fps;
    let m = (((n - 1) as f64) / ratio + 1e-9).floor() as usize + 1;
    let mut out = Array2::zeros((m, features.ncols()));
    for j in 0..m {
        let p = j as f64 * ratio;
        let i = (p.floor() as usize).min(n - 1);
        let frac = p - i as f64;
        if i + 1 < n && frac > 0.0 {
            let row = &features.row(i) * (1.0 - frac) + &features.row(i + 1) * frac;
            out.row_mut(j).assign(&row);
        } else {
            out.row_mut(j).assign(&features.row(i));
        }
    }
    out
}

/// Reads a feature file, resampling to `fps` when the stored rate differs
/// and `resample` is set.
pub fn load_precomputed(path: &Path, fps: f64, resample: bool) -> Result<ConditioningSequence, AudioError> {
    let file = FeatureFile::read(path)?;
    let features = if file.fps == fps {
        file.features
    } else if resample {
        resample_linear(&file.features, file.fps, fps)
    } else {
        return Err(AudioError::FpsMismatch { file: file.fps, requested: fps });
    };
    Ok(ConditioningSequence { features, fps, source: FeatureSource::Precomputed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::beats::tests::click_track;

    #[test]
    fn silence_gives_flat_features_and_no_beats() {
        let audio = AudioBuffer::new(vec![0.0; 22050 * 3], 22050).unwrap();
        let out = extract_baseline_features(&audio, 30.0).unwrap();
        let f = &out.conditioning.features;
        assert_eq!(f.dim(), (90, BASELINE_DIM));
        assert!(f.column(0).iter().all(|&v| v == 0.0));
        assert!(f.column(COL_BEAT).iter().all(|&v| v == 0.0));
        assert!(f.column(COL_PEAK).iter().all(|&v| v == 0.0));
        assert!(out.beats.is_empty());
        assert!(f.iter().all(|v| v.is_finite()));
    }

    /// Frames at which a simple peak picker finds envelope maxima above half
    /// the peak.
    fn picked_peaks(env: ndarray::ArrayView1<f64>) -> Vec<usize> {
        (1..env.len() - 1).filter(|&i| env[i] > 0.5 && env[i] > env[i - 1] && env[i] >= env[i + 1]).collect()
    }

    #[test]
    fn click_track_beats_are_fifteen_frames_apart() {
        let (audio, _) = click_track(120.0, 0.115, 10.0, 22050);
        let out = extract_baseline_features(&audio, 30.0).unwrap();
        let f = &out.conditioning.features;
        let beats: Vec<usize> = (0..f.nrows()).filter(|&i| f[[i, COL_BEAT]] == 1.0).collect();
        assert!(beats.len() >= 17, "{beats:?}");
        assert!(beats.windows(2).all(|w| w[1] - w[0] == 15), "{beats:?}");
        let peaks = picked_peaks(f.column(0));
        for b in &beats {
            assert!(peaks.contains(b), "beat frame {b} is not an envelope peak {peaks:?}");
        }
        let times = baseline_beat_times(f, 30.0).unwrap();
        assert_eq!(times.len(), out.beats.beat_times.len());
        for (a, b) in times.iter().zip(&out.beats.beat_times) {
            assert!((a - b).abs() <= 0.5 / 30.0 + 1e-12);
        }
        assert!(baseline_beat_times(&f.slice(s![.., ..3]).to_owned(), 30.0).is_none());
    }

    #[test]
    fn pure_tone_chroma_is_on_a() {
        let sr = 22050;
        let x: Vec<f64> = (0..sr * 2).map(|i| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / sr as f64).sin()).collect();
        let out = extract_baseline_features(&AudioBuffer::new(x, sr as u32).unwrap(), 30.0).unwrap();
        let f = &out.conditioning.features;
        for i in 2..f.nrows() {
            let a = f[[i, COL_CHROMA + 9]];
            assert!(a > 0.6, "frame {i}: A holds {a}");
        }
    }

    #[test]
    fn noise_features_are_finite() {
        use rand::{Rng, SeedableRng};
        let mut rng = crate::rng::Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..22050 * 2 + 17).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let out = extract_baseline_features(&AudioBuffer::new(x, 22050).unwrap(), 30.0).unwrap();
        assert!(out.conditioning.features.iter().all(|v| v.is_finite()));
        assert_eq!(out.conditioning.frames(), 60);
    }

    #[test]
    fn too_short_and_empty() {
        let a = AudioBuffer::new(vec![0.1; 100], 22050).unwrap();
        assert!(matches!(extract_baseline_features(&a, 30.0), Err(AudioError::TooShort { .. })));
        let e = AudioBuffer::new(vec![], 22050).unwrap();
        assert!(matches!(extract_baseline_features(&e, 30.0), Err(AudioError::EmptyAudio)));
    }

    #[test]
    fn ramp_resamples_to_every_other_value() {
        let ramp = Array2::from_shape_fn((11, 2), |(i, j)| i as f64 * (j as f64 + 1.0));
        let half = resample_linear(&ramp, 60.0, 30.0);
        assert_eq!(half.nrows(), 6);
        for j in 0..6 {
            assert_eq!(half.row(j), ramp.row(2 * j));
        }
        let up = resample_linear(&ramp, 30.0, 60.0);
        assert_eq!(up.nrows(), 21);
        assert!((up[[3, 1]] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn precomputed_round_trip_and_resampling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.feat");
        let features = Array2::from_shape_fn((9, 3), |(i, j)| (i as f32 * 0.25 - j as f32) as f64);
        FeatureFile { features: features.clone(), fps: 60.0, source: "external".into() }.write(&path).unwrap();
        let same = load_precomputed(&path, 60.0, false).unwrap();
        assert_eq!(same.features, features);
        assert_eq!(same.source, FeatureSource::Precomputed);
        assert!(matches!(load_precomputed(&path, 30.0, false), Err(AudioError::FpsMismatch { .. })));
        let half = load_precomputed(&path, 30.0, true).unwrap();
        assert_eq!(half.frames(), 5);
        assert_eq!(half.features.row(2), features.row(4));
    }
}
