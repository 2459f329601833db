use ndarray::Array2;
use rand::{Rng as _, SeedableRng};
use rayon::prelude::*;

use super::loss::{tape_total_loss, LossBreakdown};
use super::{DanceDenoiser, Ema, LossWeights, LrSchedule, ModelError, Optimizer, OptimizerKind};
use crate::diffusion::{forward_diffuse, NoiseSchedule};
use crate::kinematics::Skeleton;
use crate::rng::{standard_normal, Rng};
use crate::tape::Tape;

/// A clean motion clip and its conditioning, frame-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub motion: Array2<f64>,
    pub cond: Array2<f64>,
}

/// Parameters, EMA shadow, optimizer state and step counter.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: DanceDenoiser,
    pub ema: Ema,
    pub optimizer: Optimizer,
    pub schedule: LrSchedule,
    pub step: u64,
}

impl TrainState {
    pub fn new(model: DanceDenoiser, optimizer: OptimizerKind, lr: f64) -> Self {
        Self::with_schedule(model, optimizer, LrSchedule::Constant(lr))
    }

    pub fn with_schedule(model: DanceDenoiser, optimizer: OptimizerKind, schedule: LrSchedule) -> Self {
        let ema = Ema::new(model.config().ema_decay, model.params());
        let optimizer = Optimizer::new(optimizer, schedule.at(1), model.params());
        Self { model, ema, optimizer, schedule, step: 0 }
    }

    /// The model with EMA weights, for sampling.
    pub fn ema_model(&self) -> DanceDenoiser {
        self.model.with_params(self.ema.shadow().clone()).expect("shadow shares the parameter layout")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipReport {
    pub t: usize,
    /// False when the conditioning was replaced by the null embedding.
    pub conditioned: bool,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// Step counter after the update.
    pub step: u64,
    /// Mean over the batch.
    pub loss: LossBreakdown,
    pub clips: Vec<ClipReport>,
}

/// Per-clip gradients and loss terms.
type ClipGrads = (Vec<Array2<f64>>, LossBreakdown);

struct Draw {
    t: usize,
    noise: Array2<f64>,
    conditioned: bool,
    dropout_seed: u64,
}

fn mean_breakdown(parts: &[LossBreakdown]) -> LossBreakdown {
    let k = parts.len() as f64;
    let sum = |f: fn(&LossBreakdown) -> f64| parts.iter().map(f).sum::<f64>() / k;
    LossBreakdown {
        simple: sum(|b| b.simple),
        joint: sum(|b| b.joint),
        vel: sum(|b| b.vel),
        contact: sum(|b| b.contact),
        total: sum(|b| b.total),
    }
}

/// One optimizer update on a batch. Per clip: `t ~ U{1..T}`, `z_t` from the
/// forward process, conditioning dropped with `cond_dropout_prob`, loss on
/// `x̂ = denoise(z_t, t, c)`. Gradients are averaged over the batch, then
/// the optimizer and EMA are updated. A non-finite loss leaves `state`
/// untouched.
pub fn train_step(
    state: &mut TrainState,
    batch: &[TrainingExample],
    skel: &Skeleton,
    sched: &NoiseSchedule,
    weights: &LossWeights,
    rng: &mut Rng,
) -> Result<StepReport, ModelError> {
    weights.validate()?;
    let first = batch.first().ok_or_else(|| ModelError::InvalidConfig("empty batch".into()))?;
    let n = first.motion.nrows();
    for ex in batch {
        if ex.motion.nrows() != n {
            return Err(ModelError::ShapeMismatch { what: "batch clip", expected: first.motion.dim(), got: ex.motion.dim() });
        }
        state.model.check_inputs(ex.motion.dim(), Some(ex.cond.view()))?;
    }
    let cfg = state.model.config();
    let draws: Vec<Draw> = batch
        .iter()
        .map(|ex| Draw {
            t: rng.random_range(1..=sched.steps()),
            noise: standard_normal(rng, n, ex.motion.ncols()),
            conditioned: rng.random::<f64>() >= cfg.cond_dropout_prob,
            dropout_seed: rng.random(),
        })
        .collect();

    let model = &state.model;
    let results: Vec<Result<ClipGrads, ModelError>> = batch
        .par_iter()
        .zip(draws.par_iter())
        .map(|(ex, d)| {
            let z = forward_diffuse(&ex.motion, d.t, sched, &d.noise).expect("shapes and step validated");
            let mut tape = Tape::new();
            let p = model.bind(&mut tape);
            let zv = tape.leaf(z);
            let mut drop_rng = Rng::seed_from_u64(d.dropout_seed);
            let cond = d.conditioned.then_some(&ex.cond);
            let xhat = model.forward(&mut tape, &p, zv, d.t, cond, Some(&mut drop_rng))?;
            let (loss, breakdown) = tape_total_loss(&mut tape, skel, &ex.motion, xhat, weights)?;
            if !breakdown.is_finite() {
                return Ok((Vec::new(), breakdown));
            }
            let mut grads = tape.backward(loss);
            let g = p
                .iter()
                .zip(model.params().tensors())
                .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Array2::zeros(t.dim())))
                .collect();
            Ok((g, breakdown))
        })
        .collect();

    let mut sum: Option<Vec<Array2<f64>>> = None;
    let mut clips = Vec::with_capacity(batch.len());
    for (res, d) in results.into_iter().zip(&draws) {
        let (g, loss) = res?;
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss {
                step: state.step + 1,
                detail: format!("t={} conditioned={} terms={loss:?}", d.t, d.conditioned),
            });
        }
        sum = Some(match sum {
            None => g,
            Some(mut acc) => {
                for (a, gi) in acc.iter_mut().zip(&g) {
                    *a += gi;
                }
                acc
            }
        });
        clips.push(ClipReport { t: d.t, conditioned: d.conditioned, loss });
    }
    let scale = 1.0 / batch.len() as f64;
    let grads: Vec<Array2<f64>> = sum.expect("non-empty batch").into_iter().map(|g| g * scale).collect();
    if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(ModelError::NonFiniteLoss { step: state.step + 1, detail: "non-finite gradient".into() });
    }
    state.optimizer.set_lr(state.schedule.at(state.step + 1));
    state.optimizer.step(state.model.params_mut(), &grads)?;
    state.ema.update(state.model.params());
    state.step += 1;
    let losses: Vec<LossBreakdown> = clips.iter().map(|c| c.loss).collect();
    Ok(StepReport { step: state.step, loss: mean_breakdown(&losses), clips })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::cosine_schedule;
    use crate::kinematics::{MotionClip, PoseLayout};
    use crate::model::ModelConfig;
    use crate::rng::SeedStream;

    fn setup(cfg: ModelConfig) -> (TrainState, Vec<TrainingExample>) {
        let model = DanceDenoiser::new(cfg, &mut SeedStream::new(0).rng(0)).unwrap();
        let mut motion = MotionClip::rest(8, 30.0, PoseLayout::smpl()).unwrap().into_data();
        motion.column_mut(150).mapv_inplace(|_| 0.9);
        let cond = standard_normal(&mut SeedStream::new(1).rng(0), 8, 3);
        (TrainState::new(model, OptimizerKind::Adan, 1e-3), vec![TrainingExample { motion: motion.clone(), cond: cond.clone() }; 2])
    }

    fn tiny() -> ModelConfig {
        ModelConfig { layers: 1, heads: 2, model_dim: 16, mlp_dim: 16, seq_len: 8, dropout: 0.0, ..ModelConfig::desk(3) }
    }

    #[test]
    fn cond_dropout_one_always_uses_null_branch() {
        let (mut state, batch) = setup(ModelConfig { cond_dropout_prob: 1.0, ..tiny() });
        let sched = cosine_schedule(10).unwrap();
        let mut rng = SeedStream::new(2).rng(0);
        for _ in 0..5 {
            let r = train_step(&mut state, &batch, &Skeleton::smpl(), &sched, &LossWeights::default(), &mut rng).unwrap();
            assert!(r.clips.iter().all(|c| !c.conditioned));
            assert!(r.clips.iter().all(|c| (1..=10).contains(&c.t)));
        }
        assert_eq!(state.step, 5);
        let (mut state, batch) = setup(ModelConfig { cond_dropout_prob: 0.0, ..tiny() });
        let r = train_step(&mut state, &batch, &Skeleton::smpl(), &sched, &LossWeights::default(), &mut rng).unwrap();
        assert!(r.clips.iter().all(|c| c.conditioned));
    }

    #[test]
    fn zero_decay_ema_tracks_parameters() {
        let (mut state, batch) = setup(ModelConfig { ema_decay: 0.0, ..tiny() });
        let sched = cosine_schedule(10).unwrap();
        let before = state.model.params().clone();
        train_step(&mut state, &batch, &Skeleton::smpl(), &sched, &LossWeights::default(), &mut SeedStream::new(3).rng(0))
            .unwrap();
        assert_ne!(state.model.params(), &before);
        assert_eq!(state.ema.shadow(), state.model.params());
    }

    #[test]
    fn steps_are_reproducible_and_reduce_loss() {
        let sched = cosine_schedule(10).unwrap();
        let run = || {
            let (mut state, batch) = setup(ModelConfig { cond_dropout_prob: 0.0, ..tiny() });
            let mut rng = SeedStream::new(4).rng(0);
            let losses: Vec<f64> = (0..60)
                .map(|_| {
                    train_step(&mut state, &batch, &Skeleton::smpl(), &sched, &LossWeights::default(), &mut rng)
                        .unwrap()
                        .loss
                        .total
                })
                .collect();
            (losses, state.model.params().clone())
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        let head: f64 = a[..10].iter().sum();
        let tail: f64 = a[50..].iter().sum();
        assert!(tail < head, "head {head} tail {tail}");
    }

    #[test]
    fn non_finite_input_aborts_without_update() {
        let (mut state, mut batch) = setup(tiny());
        batch[1].motion[[3, 10]] = f64::NAN;
        let before = state.model.params().clone();
        let sched = cosine_schedule(10).unwrap();
        let err = train_step(&mut state, &batch, &Skeleton::smpl(), &sched, &LossWeights::default(), &mut SeedStream::new(5).rng(0))
            .unwrap_err();
        assert!(matches!(err, ModelError::NonFiniteLoss { step: 1, .. }));
        assert_eq!(state.model.params(), &before);
        assert_eq!(state.step, 0);
    }
}
