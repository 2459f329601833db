//! Uncompressed RIFF/WAVE reading (integer PCM and IEEE float, any channel
//! count, downmixed to mono) and 16-bit mono writing.

use std::fs;
use std::path::Path;

use super::{AudioBuffer, AudioError};
use crate::formats::FormatError;

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

struct Fmt {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

pub fn read_wav(path: &Path) -> Result<AudioBuffer, AudioError> {
    let bytes = fs::read(path).map_err(|source| FormatError::Io { path: path.to_path_buf(), source })?;
    let bad = |message: &str| AudioError::BadWav { path: path.to_path_buf(), message: message.to_string() };
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("missing RIFF/WAVE signature"));
    }
    let mut fmt = None;
    let mut data = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32_at(&bytes, pos + 4) as usize;
        let body = pos + 8;
        let end = body.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("chunk runs past end of file"))?;
        match id {
            b"fmt " => {
                if len < 16 {
                    return Err(bad("fmt chunk too short"));
                }
                let mut format = u16_at(&bytes, body);
                if format == FORMAT_EXTENSIBLE {
                    if len < 26 {
                        return Err(bad("extensible fmt chunk too short"));
                    }
                    format = u16_at(&bytes, body + 24);
                }
                fmt = Some(Fmt {
                    format,
                    channels: u16_at(&bytes, body + 2),
                    sample_rate: u32_at(&bytes, body + 4),
                    bits: u16_at(&bytes, body + 14),
                });
            }
            b"data" => data = Some(&bytes[body..end]),
            _ => {}
        }
        pos = end + (len & 1);
    }
    let fmt = fmt.ok_or_else(|| bad("no fmt chunk"))?;
    let data = data.ok_or_else(|| bad("no data chunk"))?;
    if fmt.channels == 0 {
        return Err(bad("zero channels"));
    }
    let width = match (fmt.format, fmt.bits) {
        (FORMAT_PCM, 8 | 16 | 24 | 32) | (FORMAT_FLOAT, 32 | 64) => fmt.bits as usize / 8,
        _ => return Err(bad(&format!("unsupported encoding (format {}, {} bits)", fmt.format, fmt.bits))),
    };
    let frame = width * fmt.channels as usize;
    if data.len() % frame != 0 {
        return Err(bad("data length is not a whole number of frames"));
    }
    let decode = |s: &[u8]| -> f64 {
        match (fmt.format, width) {
            (FORMAT_PCM, 1) => (s[0] as f64 - 128.0) / 128.0,
            (FORMAT_PCM, 2) => i16::from_le_bytes([s[0], s[1]]) as f64 / 32768.0,
            (FORMAT_PCM, 3) => (i32::from_le_bytes([0, s[0], s[1], s[2]]) >> 8) as f64 / 8_388_608.0,
            (FORMAT_PCM, _) => i32::from_le_bytes([s[0], s[1], s[2], s[3]]) as f64 / 2_147_483_648.0,
            (_, 4) => f32::from_le_bytes([s[0], s[1], s[2], s[3]]) as f64,
            _ => f64::from_le_bytes(s.try_into().expect("8-byte sample")),
        }
    };
    let samples = data
        .chunks_exact(frame)
        .map(|f| f.chunks_exact(width).map(decode).sum::<f64>() / fmt.channels as f64)
        .map(|s| s.clamp(-1.0, 1.0))
        .collect();
    AudioBuffer::new(samples, fmt.sample_rate)
}

/// Writes 16-bit mono PCM, rounding to the nearest code (`+1.0` clips to
/// the largest positive code).
pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<(), AudioError> {
    let n = audio.samples().len();
    let data_len = u32::try_from(2 * n).map_err(|_| AudioError::InvalidAudio("too long for a wave file".into()))?;
    let mut out = Vec::with_capacity(44 + 2 * n);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&audio.sample_rate().to_le_bytes());
    out.extend_from_slice(&(2 * audio.sample_rate()).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in audio.samples() {
        let code = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&code.to_le_bytes());
    }
    fs::write(path, out).map_err(|source| FormatError::Io { path: path.to_path_buf(), source })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixteen_bit_round_trip_is_within_half_a_code() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let samples: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.01).sin() * 0.8).collect();
        let audio = AudioBuffer::new(samples.clone(), 22050).unwrap();
        write_wav(&path, &audio).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate(), 22050);
        assert_eq!(back.samples().len(), 1000);
        for (a, b) in samples.iter().zip(back.samples()) {
            assert!((a - b).abs() <= 0.5 / 32768.0);
        }
    }

    #[test]
    fn stereo_float_is_downmixed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let frames: [[f32; 2]; 3] = [[0.5, -0.5], [1.0, 0.0], [0.25, 0.75]];
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(36u32 + 24).to_le_bytes());
        b.extend_from_slice(b"WAVEfmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&FORMAT_FLOAT.to_le_bytes());
        b.extend_from_slice(&2u16.to_le_bytes());
        b.extend_from_slice(&8000u32.to_le_bytes());
        b.extend_from_slice(&64000u32.to_le_bytes());
        b.extend_from_slice(&8u16.to_le_bytes());
        b.extend_from_slice(&32u16.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&24u32.to_le_bytes());
        for f in frames {
            for s in f {
                b.extend_from_slice(&s.to_le_bytes());
            }
        }
        fs::write(&path, b).unwrap();
        let a = read_wav(&path).unwrap();
        assert_eq!(a.samples(), &[0.0, 0.5, 0.5]);
        assert_eq!(a.sample_rate(), 8000);
    }

    #[test]
    fn rejects_non_wave_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        fs::write(&path, b"not a wave file at all").unwrap();
        assert!(matches!(read_wav(&path), Err(AudioError::BadWav { .. })));
    }
}
