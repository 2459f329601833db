use std::path::PathBuf;

use motiondiff::audio::{extract_baseline_features, write_wav};
use motiondiff::formats::{DatasetManifest, ManifestEntry, MotionFile, Split};
use motiondiff::rng::SeedStream;
use motiondiff::synth::{synth_clip, SynthParams};
use rayon::prelude::*;

use super::{create_dir, out_dir};
use crate::config::RunConfig;
use crate::error::Result;

pub const MANIFEST_NAME: &str = "manifest.txt";

/// Writes `clip_KKK.{motion,wav,features}` for each clip and a manifest.
/// The last `round(count · test_fraction)` clips form the test split.
pub fn synth_data(cfg: &RunConfig) -> Result<DatasetManifest> {
    let out = out_dir(cfg)?;
    let skel = cfg.load_skeleton()?;
    let params = SynthParams {
        frames: cfg.synth_frames,
        fps: cfg.fps,
        bpm: (cfg.bpm_min, cfg.bpm_max),
        sample_rate: cfg.sample_rate,
    };
    let seeds = SeedStream::new(cfg.seed);
    let clips = (0..cfg.synth_count)
        .into_par_iter()
        .map(|k| {
            let clip = synth_clip(&skel, &params, &mut seeds.rng(k as u64))?;
            let features = extract_baseline_features(&clip.audio, cfg.fps)?;
            Ok((clip, features))
        })
        .collect::<Result<Vec<_>>>()?;

    create_dir(out)?;
    let n_test = (cfg.synth_count as f64 * cfg.test_fraction).round() as usize;
    let mut entries = Vec::with_capacity(clips.len());
    for (k, (clip, features)) in clips.into_iter().enumerate() {
        let stem = format!("clip_{k:03}");
        let beats: Vec<String> = clip.beat_times.iter().map(|t| t.to_string()).collect();
        let file = MotionFile::new(clip.motion)
            .with_meta("generator", "synth")
            .with_meta("seed", cfg.seed)
            .with_meta("index", k)
            .with_meta("bpm", clip.bpm)
            .with_meta("beat_times", beats.join(","));
        let (motion, audio, feats) =
            (PathBuf::from(format!("{stem}.motion")), format!("{stem}.wav"), PathBuf::from(format!("{stem}.features")));
        file.write(&out.join(&motion))?;
        write_wav(&out.join(&audio), &clip.audio)?;
        features.conditioning.to_file().write(&out.join(&feats))?;
        let split = if k + n_test >= cfg.synth_count { Split::Test } else { Split::Train };
        entries.push(ManifestEntry { motion, features: feats, split });
    }
    let manifest = DatasetManifest { fps: cfg.fps, frames: cfg.synth_frames, entries };
    manifest.write(&out.join(MANIFEST_NAME))?;
    eprintln!("wrote {} clips to {}", manifest.entries.len(), out.display());
    Ok(manifest)
}

