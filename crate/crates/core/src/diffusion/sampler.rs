use ndarray::{Array2, Zip};

use super::{forward_diffuse, DiffusionError, EditConstraint, NoiseSchedule};
use crate::rng::{standard_normal, Rng, SeedStream};

/// A clean-sample predictor `x̂(z_t, t, c)`. `cond = None` is the null
/// (unconditional) query.
pub trait Denoiser {
    fn predict(&self, z: &Array2<f64>, t: usize, cond: Option<&Array2<f64>>) -> Result<Array2<f64>, DiffusionError>;

    /// Predictions for a batch sharing one timestep. Implementations may
    /// evaluate the batch in parallel; results must not depend on it.
    fn predict_batch(
        &self,
        zs: &[Array2<f64>],
        t: usize,
        conds: &[Option<&Array2<f64>>],
    ) -> Result<Vec<Array2<f64>>, DiffusionError> {
        zs.iter().zip(conds).map(|(z, c)| self.predict(z, t, *c)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    /// Classifier-free guidance weight `w`.
    pub guidance_weight: f64,
    /// Fraction of the earliest (noisiest) steps sampled with `w = 0`.
    pub guidance_dropout: f64,
    pub seed: u64,
}

impl SamplerConfig {
    /// Guidance dropout defaults to 40% of the earliest steps for `w ≤ 1`
    /// and none above.
    pub fn new(guidance_weight: f64, seed: u64) -> Self {
        let guidance_dropout = if guidance_weight <= 1.0 { 0.4 } else { 0.0 };
        Self { guidance_weight, guidance_dropout, seed }
    }

    pub fn with_dropout(mut self, fraction: f64) -> Self {
        self.guidance_dropout = fraction;
        self
    }

    pub fn validate(&self) -> Result<(), DiffusionError> {
        if !(self.guidance_weight >= 0.0 && self.guidance_weight.is_finite()) {
            return Err(DiffusionError::InvalidConfig(format!(
                "guidance weight must be finite and ≥ 0, got {}",
                self.guidance_weight
            )));
        }
        if !(0.0..1.0).contains(&self.guidance_dropout) {
            return Err(DiffusionError::InvalidConfig(format!(
                "guidance dropout must lie in [0, 1), got {}",
                self.guidance_dropout
            )));
        }
        Ok(())
    }

    /// Number of leading steps (counting down from `T`) run unguided.
    pub fn dropped_steps(&self, steps: usize) -> usize {
        (self.guidance_dropout * steps as f64).round() as usize
    }

    /// Effective guidance weight when denoising from step `t` of `steps`.
    pub fn weight_at(&self, t: usize, steps: usize) -> f64 {
        if steps - t < self.dropped_steps(steps) {
            0.0
        } else {
            self.guidance_weight
        }
    }
}

/// `x̃ = w·x̂_cond + (1 − w)·x̂_uncond`.
pub fn guided_prediction(
    cond: &Array2<f64>,
    uncond: &Array2<f64>,
    w: f64,
) -> Result<Array2<f64>, DiffusionError> {
    if cond.dim() != uncond.dim() {
        return Err(DiffusionError::ShapeMismatch { left: cond.dim(), right: uncond.dim() });
    }
    Ok(Zip::from(cond).and(uncond).map_collect(|&c, &u| w * c + (1.0 - w) * u))
}

/// Guided prediction that only queries the branches it needs: `w = 1` is
/// purely conditional and `w = 0` purely unconditional.
pub(crate) fn predict_guided<M: Denoiser + ?Sized>(
    model: &M,
    z: &Array2<f64>,
    t: usize,
    cond: Option<&Array2<f64>>,
    w: f64,
) -> Result<Array2<f64>, DiffusionError> {
    match cond {
        None => model.predict(z, t, None),
        Some(_) if w == 0.0 => model.predict(z, t, None),
        Some(c) if w == 1.0 => model.predict(z, t, Some(c)),
        Some(c) => {
            let xc = model.predict(z, t, Some(c))?;
            let xu = model.predict(z, t, None)?;
            guided_prediction(&xc, &xu, w)
        }
    }
}

/// Step `t → t−1` with an explicit noise draw. At `t = 1` the prediction
/// is returned unchanged and `noise` is ignored.
pub fn reverse_step_with_noise(
    x_hat: &Array2<f64>,
    t: usize,
    sched: &NoiseSchedule,
    noise: &Array2<f64>,
) -> Result<Array2<f64>, DiffusionError> {
    if t < 1 || t > sched.steps() {
        return Err(DiffusionError::StepOutOfRange { t, max: sched.steps() });
    }
    if t == 1 {
        return Ok(x_hat.clone());
    }
    forward_diffuse(x_hat, t - 1, sched, noise)
}

/// Re-noises the prediction `x̂` made at step `t` to step `t−1`, drawing
/// fresh standard normal noise (none at the terminal step).
pub fn reverse_step(
    x_hat: &Array2<f64>,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<Array2<f64>, DiffusionError> {
    if t < 1 || t > sched.steps() {
        return Err(DiffusionError::StepOutOfRange { t, max: sched.steps() });
    }
    if t == 1 {
        return Ok(x_hat.clone());
    }
    let (n, d) = x_hat.dim();
    let noise = standard_normal(rng, n, d);
    forward_diffuse(x_hat, t - 1, sched, &noise)
}

/// `m ⊙ q(x_known, t) + (1 − m) ⊙ z` with the given noise for `q`. At
/// `t = 0` masked entries are set to the known values exactly.
pub fn apply_constraint_with_noise(
    z: &Array2<f64>,
    t: usize,
    constraint: &EditConstraint,
    sched: &NoiseSchedule,
    noise: &Array2<f64>,
) -> Result<Array2<f64>, DiffusionError> {
    if constraint.dim() != z.dim() {
        return Err(DiffusionError::ConstraintShapeMismatch { constraint: constraint.dim(), sample: z.dim() });
    }
    sched.check_step(t)?;
    let source = if t == 0 {
        constraint.known().clone()
    } else {
        forward_diffuse(constraint.known(), t, sched, noise)?
    };
    Ok(Zip::from(z)
        .and(&source)
        .and(constraint.mask())
        .map_collect(|&zv, &kv, &m| if m { kv } else { zv }))
}

/// Constraint replacement drawing its own noise (none at `t = 0`).
pub fn apply_constraint(
    z: &Array2<f64>,
    t: usize,
    constraint: &EditConstraint,
    sched: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<Array2<f64>, DiffusionError> {
    let (n, d) = z.dim();
    let noise = if t == 0 { Array2::zeros((n, d)) } else { standard_normal(rng, n, d) };
    apply_constraint_with_noise(z, t, constraint, sched, &noise)
}

/// What the sampler did in one step; handed to observers.
#[derive(Debug)]
pub struct StepEvent<'a> {
    /// Batch index of the clip (0 for single-clip sampling).
    pub clip: usize,
    /// Timestep of `z` after this step (`t − 1`).
    pub t: usize,
    pub guidance_weight: f64,
    pub z: &'a Array2<f64>,
    /// Noise used to diffuse the known values, when a constraint was applied
    /// at `t > 0`.
    pub constraint_noise: Option<&'a Array2<f64>>,
}

/// Random stream ids for clip `k`: reverse-process noise and constraint
/// noise are drawn from separate streams so an empty constraint leaves the
/// sample unchanged.
pub(crate) fn stream_ids(clip: usize) -> (u64, u64) {
    (2 * clip as u64, 2 * clip as u64 + 1)
}

/// Ancestral sampling from `z_T ~ N(0, I)` down to `t = 0`; returns the
/// final `frames × dim` sample.
pub fn sample<M: Denoiser + ?Sized>(
    model: &M,
    cond: Option<&Array2<f64>>,
    frames: usize,
    dim: usize,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    constraint: Option<&EditConstraint>,
) -> Result<Array2<f64>, DiffusionError> {
    sample_observed(model, cond, frames, dim, sched, cfg, constraint, &mut |_| {})
}

/// [`sample`] with a per-step observer.
#[allow(clippy::too_many_arguments)]
pub fn sample_observed<M: Denoiser + ?Sized>(
    model: &M,
    cond: Option<&Array2<f64>>,
    frames: usize,
    dim: usize,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    constraint: Option<&EditConstraint>,
    observer: &mut dyn FnMut(StepEvent<'_>),
) -> Result<Array2<f64>, DiffusionError> {
    cfg.validate()?;
    if let Some(c) = constraint {
        if c.dim() != (frames, dim) {
            return Err(DiffusionError::ConstraintShapeMismatch { constraint: c.dim(), sample: (frames, dim) });
        }
    }
    let seeds = SeedStream::new(cfg.seed);
    let (noise_id, constraint_id) = stream_ids(0);
    let mut noise_rng = seeds.rng(noise_id);
    let mut constraint_rng = seeds.rng(constraint_id);
    let steps = sched.steps();

    let mut z = standard_normal(&mut noise_rng, frames, dim);
    for t in (1..=steps).rev() {
        let w = cfg.weight_at(t, steps);
        let x_hat = predict_guided(model, &z, t, cond, w)?;
        if x_hat.dim() != z.dim() {
            return Err(DiffusionError::ShapeMismatch { left: x_hat.dim(), right: z.dim() });
        }
        z = reverse_step(&x_hat, t, sched, &mut noise_rng)?;
        let mut cnoise = None;
        if let Some(c) = constraint {
            let noise = if t > 1 { standard_normal(&mut constraint_rng, frames, dim) } else { Array2::zeros((frames, dim)) };
            z = apply_constraint_with_noise(&z, t - 1, c, sched, &noise)?;
            if t > 1 {
                cnoise = Some(noise);
            }
        }
        observer(StepEvent { clip: 0, t: t - 1, guidance_weight: w, z: &z, constraint_noise: cnoise.as_ref() });
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::cosine_schedule;
    use std::cell::Cell;

    /// Always returns the same clean sample and counts queries per branch.
    struct FixedModel {
        target: Array2<f64>,
        cond_calls: Cell<usize>,
        uncond_calls: Cell<usize>,
    }

    impl FixedModel {
        fn new(target: Array2<f64>) -> Self {
            Self { target, cond_calls: Cell::new(0), uncond_calls: Cell::new(0) }
        }
    }

    impl Denoiser for FixedModel {
        fn predict(&self, _z: &Array2<f64>, _t: usize, cond: Option<&Array2<f64>>) -> Result<Array2<f64>, DiffusionError> {
            match cond {
                Some(_) => self.cond_calls.set(self.cond_calls.get() + 1),
                None => self.uncond_calls.set(self.uncond_calls.get() + 1),
            }
            Ok(self.target.clone())
        }
    }

    /// Returns a damped copy of its input, so trajectories depend on noise.
    struct Shrink;

    impl Denoiser for Shrink {
        fn predict(&self, z: &Array2<f64>, _t: usize, cond: Option<&Array2<f64>>) -> Result<Array2<f64>, DiffusionError> {
            let bias = if cond.is_some() { 0.1 } else { -0.1 };
            Ok(z * 0.5 + bias)
        }
    }

    fn target(n: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |(i, j)| (i as f64 * 0.37 + j as f64 * 0.11).sin())
    }

    #[test]
    fn guidance_arithmetic() {
        let c = Array2::ones((2, 3));
        let u = Array2::zeros((2, 3));
        assert_eq!(guided_prediction(&c, &u, 1.0).unwrap(), c);
        assert_eq!(guided_prediction(&c, &u, 0.0).unwrap(), u);
        assert!(guided_prediction(&c, &u, 2.0).unwrap().iter().all(|&v| v == 2.0));
        assert!(guided_prediction(&c, &Array2::zeros((3, 2)), 1.0).is_err());
    }

    #[test]
    fn reverse_step_rules() {
        let s = cosine_schedule(10).unwrap();
        let x = target(4, 5);
        let mut rng = SeedStream::new(3).rng(0);
        assert_eq!(reverse_step(&x, 1, &s, &mut rng).unwrap(), x);
        assert!(reverse_step(&x, 0, &s, &mut rng).is_err());
        assert!(reverse_step(&x, 11, &s, &mut rng).is_err());

        let a = reverse_step(&x, 5, &s, &mut SeedStream::new(9).rng(0)).unwrap();
        let b = reverse_step(&x, 5, &s, &mut SeedStream::new(9).rng(0)).unwrap();
        assert_eq!(a, b);

        // Captured noise: recompute the forward marginal at t−1 = 1 by hand.
        let eps = standard_normal(&mut SeedStream::new(4).rng(0), 4, 5);
        let z = reverse_step_with_noise(&x, 2, &s, &eps).unwrap();
        let a1 = s.alpha_bar(1);
        let want = &x * a1.sqrt() + &eps * (1.0 - a1).sqrt();
        assert_eq!(z, want);
    }

    #[test]
    fn constraint_rules() {
        let s = cosine_schedule(10).unwrap();
        let z = target(4, 5);
        let known = Array2::from_elem((4, 5), 7.0);
        let mut rng = SeedStream::new(5).rng(0);

        let empty = EditConstraint::new(known.clone(), Array2::from_elem((4, 5), false)).unwrap();
        assert_eq!(apply_constraint(&z, 3, &empty, &s, &mut rng).unwrap(), z);

        let full = EditConstraint::new(known.clone(), Array2::from_elem((4, 5), true)).unwrap();
        assert_eq!(apply_constraint(&z, 0, &full, &s, &mut rng).unwrap(), known);

        let mask = Array2::from_shape_fn((4, 5), |(i, j)| (i + j) % 2 == 0);
        let mixed = EditConstraint::new(known.clone(), mask.clone()).unwrap();
        let eps = standard_normal(&mut rng, 4, 5);
        let out = apply_constraint_with_noise(&z, 4, &mixed, &s, &eps).unwrap();
        let a = s.alpha_bar(4);
        for ((i, j), &v) in out.indexed_iter() {
            if mask[[i, j]] {
                assert_eq!(v, a.sqrt() * 7.0 + (1.0 - a).sqrt() * eps[[i, j]]);
            } else {
                assert_eq!(v, z[[i, j]]);
            }
        }
        let wrong = EditConstraint::empty(3, 5);
        assert!(matches!(
            apply_constraint(&z, 2, &wrong, &s, &mut rng),
            Err(DiffusionError::ConstraintShapeMismatch { .. })
        ));
    }

    #[test]
    fn fixed_model_is_returned_in_unmasked_positions() {
        let s = cosine_schedule(20).unwrap();
        let x_star = target(6, 4);
        let model = FixedModel::new(x_star.clone());
        let known = Array2::from_elem((6, 4), -3.0);
        let mask = Array2::from_shape_fn((6, 4), |(i, _)| i < 2);
        let c = EditConstraint::new(known, mask).unwrap();
        let cfg = SamplerConfig::new(1.0, 11);
        let out = sample(&model, Some(&Array2::zeros((6, 2))), 6, 4, &s, &cfg, Some(&c)).unwrap();
        for ((i, j), &v) in out.indexed_iter() {
            assert_eq!(v, if i < 2 { -3.0 } else { x_star[[i, j]] });
        }
    }

    #[test]
    fn branch_queries_follow_guidance_weight() {
        let s = cosine_schedule(50).unwrap();
        let cond = Array2::zeros((3, 2));

        let m = FixedModel::new(target(3, 4));
        sample(&m, Some(&cond), 3, 4, &s, &SamplerConfig::new(1.0, 0).with_dropout(0.0), None).unwrap();
        assert_eq!((m.cond_calls.get(), m.uncond_calls.get()), (50, 0));

        // Default dropout at w = 1 runs the first 40% (20 steps) unguided.
        let m = FixedModel::new(target(3, 4));
        sample(&m, Some(&cond), 3, 4, &s, &SamplerConfig::new(1.0, 0), None).unwrap();
        assert_eq!((m.cond_calls.get(), m.uncond_calls.get()), (30, 20));

        let m = FixedModel::new(target(3, 4));
        sample(&m, Some(&cond), 3, 4, &s, &SamplerConfig::new(2.0, 0), None).unwrap();
        assert_eq!((m.cond_calls.get(), m.uncond_calls.get()), (50, 50));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let s = cosine_schedule(30).unwrap();
        let cond = Array2::zeros((5, 2));
        let cfg = SamplerConfig::new(2.0, 42);
        let a = sample(&Shrink, Some(&cond), 5, 3, &s, &cfg, None).unwrap();
        let b = sample(&Shrink, Some(&cond), 5, 3, &s, &cfg, None).unwrap();
        assert_eq!(a, b);
        let c = sample(&Shrink, Some(&cond), 5, 3, &s, &SamplerConfig::new(2.0, 43), None).unwrap();
        assert_ne!(a, c);
        // Empty constraint is a no-op on the trajectory.
        let e = EditConstraint::empty(5, 3);
        let d = sample(&Shrink, Some(&cond), 5, 3, &s, &cfg, Some(&e)).unwrap();
        assert_eq!(a, d);
    }

    #[test]
    fn every_step_honors_the_constraint() {
        let s = cosine_schedule(25).unwrap();
        let known = target(6, 4) * 3.0;
        let mask = Array2::from_shape_fn((6, 4), |(i, j)| i == 0 || i == 5 || j == 2);
        let c = EditConstraint::new(known.clone(), mask.clone()).unwrap();
        let mut checked = 0;
        let out = sample_observed(
            &Shrink,
            None,
            6,
            4,
            &s,
            &SamplerConfig::new(1.0, 8),
            Some(&c),
            &mut |ev| {
                let reference = match ev.constraint_noise {
                    Some(eps) => forward_diffuse(&known, ev.t, &s, eps).unwrap(),
                    None => known.clone(),
                };
                for ((i, j), &m) in mask.indexed_iter() {
                    if m {
                        assert_eq!(ev.z[[i, j]], reference[[i, j]], "t={} ({i},{j})", ev.t);
                    }
                }
                checked += 1;
            },
        )
        .unwrap();
        assert_eq!(checked, 25);
        for ((i, j), &m) in mask.indexed_iter() {
            if m {
                assert_eq!(out[[i, j]], known[[i, j]]);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(SamplerConfig::new(-1.0, 0).validate().is_err());
        assert!(SamplerConfig::new(1.0, 0).with_dropout(1.0).validate().is_err());
        assert_eq!(SamplerConfig::new(2.0, 0).guidance_dropout, 0.0);
        assert_eq!(SamplerConfig::new(1.0, 0).dropped_steps(1000), 400);
        let cfg = SamplerConfig::new(1.0, 0);
        assert_eq!(cfg.weight_at(1000, 1000), 0.0);
        assert_eq!(cfg.weight_at(601, 1000), 0.0);
        assert_eq!(cfg.weight_at(600, 1000), 1.0);
    }
}
