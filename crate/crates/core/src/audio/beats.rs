//! Onset envelope, autocorrelation tempo estimate and dynamic-programming
//! beat tracking.

use ndarray::Array1;

use super::spectral::{log_mel, mel_filterbank, power_frames, spectral_flux, N_MELS};
use super::{AudioBuffer, AudioError, BeatGrid};

/// Frame rate of the envelope used for tempo and beat estimation, in Hz.
pub const BEAT_ENVELOPE_RATE: f64 = 100.0;

const MIN_BPM: f64 = 40.0;
const MAX_BPM: f64 = 220.0;
/// Centre and width (in octaves) of the log-normal tempo prior.
const PRIOR_BPM: f64 = 120.0;
const PRIOR_OCTAVES: f64 = 1.0;
/// Penalty on deviations of inter-beat intervals from the tempo period.
const TIGHTNESS: f64 = 100.0;
const MIN_DURATION: f64 = 2.0;

/// Onset strength at `rate` frames per second: half-wave rectified spectral
/// flux of the log-mel spectrogram, scaled to peak 1. Frame `k` reflects
/// onsets in `[k/rate, (k+1)/rate)`. The audio is peak-normalized first, so
/// the envelope does not depend on overall gain.
pub fn onset_envelope(audio: &AudioBuffer, rate: f64, n_fft: usize) -> Result<Array1<f64>, AudioError> {
    if audio.samples().is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    let hop = (audio.sample_rate() as f64 / rate).round().max(1.0) as usize;
    let frames = audio.samples().len() / hop;
    if frames == 0 {
        return Err(AudioError::TooShort { needed: hop as f64 / audio.sample_rate() as f64, got: audio.duration() });
    }
    let samples = audio.peak_normalized();
    let power = power_frames(&samples, hop, n_fft, frames);
    let mel = log_mel(&power, &mel_filterbank(audio.sample_rate(), n_fft, N_MELS));
    let mut flux = spectral_flux(&mel);
    let peak = flux.fold(0.0f64, |m, &v| m.max(v));
    if peak > 0.0 {
        flux /= peak;
    }
    Ok(flux)
}

/// Window length for the beat envelope: about 23 ms, a power of two.
fn beat_window(sample_rate: u32) -> usize {
    ((sample_rate as f64 * 0.023) as usize).next_power_of_two().max(256)
}

fn tempo_prior(bpm: f64) -> f64 {
    let octaves = (bpm / PRIOR_BPM).log2() / PRIOR_OCTAVES;
    (-0.5 * octaves * octaves).exp()
}

/// Period of the envelope in frames, from the prior-weighted autocorrelation
/// peak within the tempo range, refined by parabolic interpolation.
fn estimate_period(env: &Array1<f64>, rate: f64) -> Option<f64> {
    let n = env.len();
    let mean = env.mean()?;
    let x: Vec<f64> = env.iter().map(|v| v - mean).collect();
    let lag_min = ((60.0 * rate / MAX_BPM).floor() as usize).max(2);
    let lag_max = ((60.0 * rate / MIN_BPM).ceil() as usize).min(n.saturating_sub(2));
    if lag_min >= lag_max {
        return None;
    }
    let ac: Vec<f64> = (0..=lag_max + 1).map(|l| x.iter().zip(&x[l..]).map(|(a, b)| a * b).sum()).collect();
    if ac[0].is_nan() || ac[0] <= 1e-12 {
        return None;
    }
    let mut best: Option<(usize, f64)> = None;
    for l in lag_min..=lag_max {
        let is_peak = ac[l] > 0.0 && ac[l] >= ac[l - 1] && ac[l] >= ac[l + 1];
        let score = ac[l] * tempo_prior(60.0 * rate / l as f64);
        if is_peak && best.is_none_or(|(_, s)| score > s) {
            best = Some((l, score));
        }
    }
    let (l, _) = best?;
    let (a, b, c) = (ac[l - 1], ac[l], ac[l + 1]);
    let curvature = a - 2.0 * b + c;
    let delta = if curvature < 0.0 { (0.5 * (a - c) / curvature).clamp(-0.5, 0.5) } else { 0.0 };
    Some(l as f64 + delta)
}

fn gaussian_smooth(x: &Array1<f64>, sigma: f64) -> Array1<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp()).collect();
    let n = x.len() as isize;
    Array1::from_shape_fn(x.len(), |i| {
        kernel
            .iter()
            .enumerate()
            .filter_map(|(j, w)| {
                let src = i as isize + j as isize - radius;
                (0..n).contains(&src).then(|| w * x[src as usize])
            })
            .sum()
    })
}

/// Beat frames by dynamic programming: each beat's cumulative score is its
/// onset strength plus the best predecessor score, penalized by
/// `TIGHTNESS · ln(interval/period)²`.
fn track_beats(env: &Array1<f64>, period: f64) -> Vec<usize> {
    let n = env.len();
    let std = env.std(0.0);
    if std <= 0.0 {
        return Vec::new();
    }
    let local = gaussian_smooth(&(env / std), (period / 32.0).max(0.5));
    let max_local = local.fold(0.0f64, |m, &v| m.max(v));
    let mut cum = vec![0.0; n];
    let mut back: Vec<Option<usize>> = vec![None; n];
    let near = ((period / 2.0).round() as usize).max(1);
    let far = (2.0 * period).round() as usize;
    let mut started = false;
    for t in 0..n {
        let mut best: Option<(usize, f64)> = None;
        let candidates = if t >= near { t.saturating_sub(far)..t - near + 1 } else { 0..0 };
        for tau in candidates {
            let ratio = (t - tau) as f64 / period;
            let score = cum[tau] - TIGHTNESS * ratio.ln().powi(2);
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((tau, score));
            }
        }
        // Chains only begin once the envelope first becomes substantial.
        started |= local[t] >= 0.01 * max_local;
        match best {
            Some((tau, s)) if started => {
                cum[t] = local[t] + s;
                back[t] = Some(tau);
            }
            _ => cum[t] = local[t],
        }
    }
    // Last beat: the latest local maximum of the cumulative score that
    // reaches half the median of all such maxima.
    let maxima: Vec<usize> = (0..n)
        .filter(|&t| (t == 0 || cum[t] >= cum[t - 1]) && (t + 1 == n || cum[t] > cum[t + 1]))
        .collect();
    if maxima.is_empty() {
        return Vec::new();
    }
    let mut values: Vec<f64> = maxima.iter().map(|&t| cum[t]).collect();
    values.sort_by(f64::total_cmp);
    let median = values[values.len() / 2];
    let last = *maxima.iter().rev().find(|&&t| cum[t] >= 0.5 * median).unwrap_or(&maxima[maxima.len() - 1]);
    let mut beats = vec![last];
    while let Some(prev) = back[*beats.last().expect("non-empty")] {
        beats.push(prev);
    }
    beats.reverse();
    // Trim weak beats at either end, where the chain ran through silence.
    let rms = (beats.iter().map(|&b| local[b] * local[b]).sum::<f64>() / beats.len() as f64).sqrt();
    let keep = |b: &usize| local[*b] > 0.5 * rms;
    let start = beats.iter().position(keep).unwrap_or(beats.len());
    let end = beats.iter().rposition(keep).map_or(start, |e| e + 1);
    beats[start..end.max(start)].to_vec()
}

/// Tempo and beat times. Beat times are the centres of the envelope frames
/// the tracker selects.
pub fn detect_beats(audio: &AudioBuffer) -> Result<BeatGrid, AudioError> {
    if audio.samples().is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    if audio.duration() < MIN_DURATION {
        return Err(AudioError::TooShort { needed: MIN_DURATION, got: audio.duration() });
    }
    let env = onset_envelope(audio, BEAT_ENVELOPE_RATE, beat_window(audio.sample_rate()))?;
    let period = estimate_period(&env, BEAT_ENVELOPE_RATE).ok_or(AudioError::NoTempoFound)?;
    let hop = (audio.sample_rate() as f64 / BEAT_ENVELOPE_RATE).round() as usize;
    let frame_secs = hop as f64 / audio.sample_rate() as f64;
    let beat_times = track_beats(&env, period)
        .into_iter()
        .map(|b| (b as f64 + 0.5) * frame_secs)
        .filter(|&t| t < audio.duration())
        .collect();
    Ok(BeatGrid { beat_times, tempo_bpm: Some(60.0 * BEAT_ENVELOPE_RATE / period) })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Decaying 1 kHz bursts of 10 ms at the given times.
    pub(crate) fn clicks(times: &[f64], seconds: f64, sr: u32) -> AudioBuffer {
        let mut x = vec![0.0; (seconds * sr as f64) as usize];
        for &t in times {
            let start = (t * sr as f64).round() as usize;
            for i in 0..(0.01 * sr as f64) as usize {
                if let Some(s) = x.get_mut(start + i) {
                    let u = i as f64 / sr as f64;
                    *s += 0.9 * (-u / 0.003).exp() * (2.0 * std::f64::consts::PI * 1000.0 * u).sin();
                }
            }
        }
        AudioBuffer::new(x, sr).unwrap()
    }

    pub(crate) fn click_track(bpm: f64, offset: f64, seconds: f64, sr: u32) -> (AudioBuffer, Vec<f64>) {
        let times: Vec<f64> = (0..).map(|k| offset + k as f64 * 60.0 / bpm).take_while(|&t| t < seconds - 0.05).collect();
        (clicks(&times, seconds, sr), times)
    }

    fn assert_beats_on_clicks(grid: &BeatGrid, truth: &[f64], tol: f64) {
        assert!(grid.beat_times.len() + 2 >= truth.len(), "{} beats for {} clicks", grid.beat_times.len(), truth.len());
        for b in &grid.beat_times {
            let err = truth.iter().map(|t| (t - b).abs()).fold(f64::INFINITY, f64::min);
            assert!(err <= tol, "beat {b:.3} is {err:.3} s from the nearest click");
        }
        assert!(grid.beat_times.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn click_track_at_100_bpm() {
        let (audio, truth) = click_track(100.0, 0.3, 10.0, 22050);
        let grid = detect_beats(&audio).unwrap();
        let bpm = grid.tempo_bpm.unwrap();
        assert!((bpm - 100.0).abs() <= 2.0, "tempo {bpm}");
        assert_beats_on_clicks(&grid, &truth, 0.03);
    }

    #[test]
    fn click_track_at_120_bpm_and_44k() {
        let (audio, truth) = click_track(120.0, 0.25, 8.0, 44100);
        let grid = detect_beats(&audio).unwrap();
        assert!((grid.tempo_bpm.unwrap() - 120.0).abs() <= 2.0);
        assert_beats_on_clicks(&grid, &truth, 0.03);
    }

    #[test]
    fn stretching_twofold_halves_the_tempo() {
        let (audio, _) = click_track(120.0, 0.25, 8.0, 22050);
        let s = audio.samples();
        let stretched: Vec<f64> = (0..2 * s.len())
            .map(|i| {
                let p = i as f64 / 2.0;
                let j = p.floor() as usize;
                let f = p - j as f64;
                s[j] * (1.0 - f) + s.get(j + 1).copied().unwrap_or(0.0) * f
            })
            .collect();
        let a = detect_beats(&audio).unwrap().tempo_bpm.unwrap();
        let b = detect_beats(&AudioBuffer::new(stretched, 22050).unwrap()).unwrap().tempo_bpm.unwrap();
        assert!((b - a / 2.0).abs() <= 2.0, "{a} → {b}");
    }

    #[test]
    fn silence_has_no_tempo() {
        let audio = AudioBuffer::new(vec![0.0; 22050 * 3], 22050).unwrap();
        assert!(matches!(detect_beats(&audio), Err(AudioError::NoTempoFound)));
    }

    #[test]
    fn short_audio_is_rejected() {
        let audio = AudioBuffer::new(vec![0.0; 22050], 22050).unwrap();
        assert!(matches!(detect_beats(&audio), Err(AudioError::TooShort { .. })));
        let empty = AudioBuffer::new(vec![], 22050).unwrap();
        assert!(matches!(detect_beats(&empty), Err(AudioError::EmptyAudio)));
    }

    #[test]
    fn beats_are_amplitude_invariant() {
        let (audio, _) = click_track(110.0, 0.4, 6.0, 22050);
        let grid = detect_beats(&audio).unwrap();
        for gain in [0.01, 0.37, 1.0 / 0.9] {
            let scaled = AudioBuffer::new(audio.samples().iter().map(|s| s * gain).collect(), 22050).unwrap();
            assert_eq!(detect_beats(&scaled).unwrap(), grid, "gain {gain}");
        }
    }

    #[test]
    fn transient_lands_in_its_frame() {
        for tau in [0.51, 1.234, 2.0] {
            let audio = clicks(&[tau], 3.0, 22050);
            let env = onset_envelope(&audio, 30.0, 1024).unwrap();
            let peak = env.iter().enumerate().fold((0, 0.0), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) }).0;
            let expected = (tau * 30.0).floor() as i64;
            assert!((peak as i64 - expected).abs() <= 1, "tau {tau}: peak frame {peak}, expected {expected}");
        }
    }
}
