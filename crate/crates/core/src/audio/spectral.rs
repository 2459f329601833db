//! Short-time power spectra, mel filterbank, cepstra and chroma.

use ndarray::{Array1, Array2, Axis};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

pub const N_MELS: usize = 64;
pub const N_MFCC: usize = 20;
pub const N_CHROMA: usize = 12;

/// Dynamic range kept below the loudest mel cell, in dB.
const TOP_DB: f64 = 80.0;
const AMIN: f64 = 1e-10;
const CHROMA_MIN_HZ: f64 = 32.7;
const CHROMA_MAX_HZ: f64 = 4186.0;

/// Power spectra of Hann-windowed frames. Frame `k` is the `n_fft` samples
/// ending at `(k + 1)·hop`, zero-padded before the start of the signal, so
/// it sees everything up to the end of hop interval `k` and nothing after.
pub(crate) fn power_frames(samples: &[f64], hop: usize, n_fft: usize, frames: usize) -> Array2<f64> {
    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    let window: Vec<f64> =
        (0..n_fft).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n_fft as f64).cos()).collect();
    let bins = n_fft / 2 + 1;
    let mut out = Array2::zeros((frames, bins));
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for (k, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let end = (k + 1) * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            let s = (end + i).checked_sub(n_fft).and_then(|j| samples.get(j)).copied().unwrap_or(0.0);
            *b = Complex::new(s * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (r, c) in row.iter_mut().zip(&buf[..bins]) {
            *r = c.norm_sqr();
        }
    }
    out
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters, `n_mels × (n_fft/2 + 1)`, evenly spaced on the mel
/// scale from 0 Hz to Nyquist, each with unit peak.
pub fn mel_filterbank(sample_rate: u32, n_fft: usize, n_mels: usize) -> Array2<f64> {
    let bins = n_fft / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2).map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64)).collect();
    let mut fb = Array2::zeros((n_mels, bins));
    for m in 0..n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for b in 0..bins {
            let f = b as f64 * sample_rate as f64 / n_fft as f64;
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            fb[[m, b]] = w;
        }
    }
    fb
}

/// Mel power in dB relative to the loudest cell, floored at `-TOP_DB`, then
/// scaled by `1/TOP_DB` into `[-1, 0]`. Silence maps to all `-1`.
pub(crate) fn log_mel(power: &Array2<f64>, filterbank: &Array2<f64>) -> Array2<f64> {
    let mel = power.dot(&filterbank.t());
    let db = mel.mapv(|p| 10.0 * p.max(AMIN).log10());
    let peak = db.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    db.mapv(|v| ((v - peak).max(-TOP_DB)) / TOP_DB)
}

/// Orthonormal DCT-II of each row, first `n` coefficients.
pub(crate) fn dct_rows(x: &Array2<f64>, n: usize) -> Array2<f64> {
    let m = x.ncols();
    let basis = Array2::from_shape_fn((m, n), |(j, k)| {
        let scale = if k == 0 { (1.0 / m as f64).sqrt() } else { (2.0 / m as f64).sqrt() };
        scale * (std::f64::consts::PI * k as f64 * (j as f64 + 0.5) / m as f64).cos()
    });
    x.dot(&basis)
}

/// Pitch class (C = 0, …, B = 11) of a frequency, or `None` outside the
/// chroma range.
pub fn chroma_bin(hz: f64) -> Option<usize> {
    if !(CHROMA_MIN_HZ..=CHROMA_MAX_HZ).contains(&hz) {
        return None;
    }
    let semis_from_a = (12.0 * (hz / 440.0).log2()).round() as i64;
    Some((semis_from_a + 9).rem_euclid(12) as usize)
}

/// Per-frame pitch-class energy fractions; rows sum to 1, or are all zero
/// for frames without energy in the chroma range.
pub(crate) fn chroma(power: &Array2<f64>, sample_rate: u32, n_fft: usize) -> Array2<f64> {
    let classes: Vec<Option<usize>> =
        (0..power.ncols()).map(|b| chroma_bin(b as f64 * sample_rate as f64 / n_fft as f64)).collect();
    let mut out = Array2::zeros((power.nrows(), N_CHROMA));
    for (row, mut dst) in power.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        for (p, c) in row.iter().zip(&classes) {
            if let Some(c) = c {
                dst[*c] += p;
            }
        }
        let total = dst.sum();
        if total > AMIN {
            dst /= total;
        } else {
            dst.fill(0.0);
        }
    }
    out
}

/// Half-wave rectified frame-to-frame increase of the log-mel rows, summed
/// over bands. The first frame has no predecessor and scores 0.
pub(crate) fn spectral_flux(log_mel: &Array2<f64>) -> Array1<f64> {
    let mut flux = Array1::zeros(log_mel.nrows());
    for k in 1..log_mel.nrows() {
        flux[k] = log_mel.row(k).iter().zip(log_mel.row(k - 1)).map(|(a, b)| (a - b).max(0.0)).sum();
    }
    flux
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_round_trips() {
        for hz in [0.0, 100.0, 700.0, 4000.0, 11025.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn filterbank_covers_the_band() {
        let fb = mel_filterbank(22050, 1024, N_MELS);
        assert_eq!(fb.dim(), (N_MELS, 513));
        for row in fb.axis_iter(Axis(0)) {
            assert!(row.sum() > 0.0, "empty filter");
            assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
        }
    }

    #[test]
    fn pitch_classes() {
        assert_eq!(chroma_bin(440.0), Some(9));
        assert_eq!(chroma_bin(261.63), Some(0));
        assert_eq!(chroma_bin(880.0 * 2f64.powf(2.0 / 12.0)), Some(11));
        assert_eq!(chroma_bin(10.0), None);
    }

    #[test]
    fn dct_matches_direct_sum() {
        let x = Array2::from_shape_fn((2, 8), |(i, j)| ((i * 8 + j) as f64 * 0.7).sin());
        let y = dct_rows(&x, 3);
        let m = 8.0;
        for i in 0..2 {
            for k in 0..3 {
                let s: f64 = (0..8)
                    .map(|j| x[[i, j]] * (std::f64::consts::PI * k as f64 * (j as f64 + 0.5) / m).cos())
                    .sum();
                let s = s * if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
                assert!((s - y[[i, k]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn frames_only_see_the_past() {
        let mut x = vec![0.0; 4000];
        x[2500] = 1.0;
        let p = power_frames(&x, 500, 1024, 8);
        for k in 0..8 {
            let e: f64 = p.row(k).sum();
            // Sample 2500 lies in hop interval 5 and within the window of frames 5 and 6.
            if k == 5 || k == 6 {
                assert!(e > 0.0, "frame {k}");
            } else {
                assert_eq!(e, 0.0, "frame {k}");
            }
        }
    }
}
