use ndarray::{s, Array2};

use super::sampler::{guided_prediction, reverse_step, stream_ids};
use super::{Denoiser, DiffusionError, NoiseSchedule, SamplerConfig};
use crate::rng::{standard_normal, SeedStream};

#[derive(Clone, Debug)]
pub struct LongFormOutput {
    /// Per-slice samples before blending; slice `k`'s first half equals
    /// slice `k−1`'s second half exactly.
    pub clips: Vec<Array2<f64>>,
    /// `B·N/2 + N/2` frames.
    pub stitched: Array2<f64>,
}

/// `count` conditioning windows of `frames` rows taken with stride
/// `frames/2` (50% overlap).
pub fn overlapping_slices(
    features: &Array2<f64>,
    frames: usize,
    count: usize,
) -> Result<Vec<Array2<f64>>, DiffusionError> {
    if frames < 4 || !frames.is_multiple_of(2) {
        return Err(DiffusionError::BadOverlap(format!("clip length {frames} must be even and at least 4")));
    }
    let half = frames / 2;
    let needed = (count + 1) * half;
    if features.nrows() < needed {
        return Err(DiffusionError::BadOverlap(format!(
            "{count} slices of {frames} frames need {needed} conditioning frames, have {}",
            features.nrows()
        )));
    }
    Ok((0..count).map(|k| features.slice(s![k * half..k * half + frames, ..]).to_owned()).collect())
}

/// Linear cross-fade weights `(previous, next)` for overlap frame
/// `j = 0..half`: the previous slice's weight decays from 1 to 0.
pub fn blend_weights(half: usize) -> Vec<(f64, f64)> {
    if half == 1 {
        return vec![(1.0, 0.0)];
    }
    (0..half)
        .map(|j| {
            let next = j as f64 / (half - 1) as f64;
            (1.0 - next, next)
        })
        .collect()
}

/// Joins half-overlapping slices, cross-fading each overlap.
pub fn stitch(clips: &[Array2<f64>]) -> Result<Array2<f64>, DiffusionError> {
    let first = clips.first().ok_or_else(|| DiffusionError::BadOverlap("no slices".into()))?;
    let (n, d) = first.dim();
    if n % 2 != 0 || clips.iter().any(|c| c.dim() != (n, d)) {
        return Err(DiffusionError::BadOverlap("slices must share an even length and width".into()));
    }
    let half = n / 2;
    let weights = blend_weights(half);
    let mut out = Array2::zeros(((clips.len() + 1) * half, d));
    out.slice_mut(s![..half, ..]).assign(&first.slice(s![..half, ..]));
    for k in 1..clips.len() {
        let prev = clips[k - 1].slice(s![half.., ..]);
        let next = clips[k].slice(s![..half, ..]);
        for (j, &(wp, wn)) in weights.iter().enumerate() {
            let row = &prev.row(j) * wp + &next.row(j) * wn;
            out.row_mut(k * half + j).assign(&row);
        }
    }
    let last = clips.last().unwrap();
    let tail = clips.len() * half;
    out.slice_mut(s![tail.., ..]).assign(&last.slice(s![half.., ..]));
    Ok(out)
}

fn check_alignment(conds: &[Array2<f64>], frames: usize) -> Result<(), DiffusionError> {
    if conds.len() < 2 {
        return Err(DiffusionError::BadOverlap(format!("need at least 2 slices, got {}", conds.len())));
    }
    if frames < 4 || !frames.is_multiple_of(2) {
        return Err(DiffusionError::BadOverlap(format!("clip length {frames} must be even and at least 4")));
    }
    let half = frames / 2;
    let width = conds[0].ncols();
    for (k, c) in conds.iter().enumerate() {
        if c.dim() != (frames, width) {
            return Err(DiffusionError::BadOverlap(format!("slice {k} has shape {:?}", c.dim())));
        }
    }
    for k in 1..conds.len() {
        if conds[k - 1].slice(s![half.., ..]) != conds[k].slice(s![..half, ..]) {
            return Err(DiffusionError::BadOverlap(format!(
                "slice {k} does not start where slice {} is half way through",
                k - 1
            )));
        }
    }
    Ok(())
}

/// Batched sampling of `B` half-overlapping slices. After every reverse
/// step (including the last), each slice's first half is overwritten with
/// the previous slice's second half; the final slices are then stitched.
pub fn long_form_sample<M: Denoiser + ?Sized>(
    model: &M,
    conds: &[Array2<f64>],
    frames: usize,
    dim: usize,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<LongFormOutput, DiffusionError> {
    cfg.validate()?;
    check_alignment(conds, frames)?;
    let half = frames / 2;
    let batch = conds.len();
    let seeds = SeedStream::new(cfg.seed);
    let mut rngs: Vec<_> = (0..batch).map(|k| seeds.rng(stream_ids(k).0)).collect();
    let mut zs: Vec<Array2<f64>> = rngs.iter_mut().map(|r| standard_normal(r, frames, dim)).collect();
    let cond_refs: Vec<Option<&Array2<f64>>> = conds.iter().map(Some).collect();
    let null_refs: Vec<Option<&Array2<f64>>> = vec![None; batch];
    let steps = sched.steps();

    for t in (1..=steps).rev() {
        let w = cfg.weight_at(t, steps);
        let x_hats = if w == 1.0 {
            model.predict_batch(&zs, t, &cond_refs)?
        } else if w == 0.0 {
            model.predict_batch(&zs, t, &null_refs)?
        } else {
            let xc = model.predict_batch(&zs, t, &cond_refs)?;
            let xu = model.predict_batch(&zs, t, &null_refs)?;
            xc.iter().zip(&xu).map(|(c, u)| guided_prediction(c, u, w)).collect::<Result<_, _>>()?
        };
        for (k, x_hat) in x_hats.iter().enumerate() {
            if x_hat.dim() != (frames, dim) {
                return Err(DiffusionError::ShapeMismatch { left: x_hat.dim(), right: (frames, dim) });
            }
            zs[k] = reverse_step(x_hat, t, sched, &mut rngs[k])?;
        }
        for k in 1..batch {
            let tail = zs[k - 1].slice(s![half.., ..]).to_owned();
            zs[k].slice_mut(s![..half, ..]).assign(&tail);
        }
    }
    let stitched = stitch(&zs)?;
    Ok(LongFormOutput { clips: zs, stitched })
}
