use ndarray::Array2;

use super::DiffusionError;

/// Cumulative signal fractions `ᾱ_0 … ᾱ_T`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

impl NoiseSchedule {
    /// Validates: at least two entries, strictly decreasing, all in
    /// `(0, 1]`, `ᾱ_0 ≥ 0.999` and `ᾱ_T < 0.01`.
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self, DiffusionError> {
        let bad = |m: &str| Err(DiffusionError::InvalidSchedule(m.to_string()));
        if alpha_bar.len() < 2 {
            return bad("need at least ᾱ_0 and ᾱ_1");
        }
        if !alpha_bar.iter().all(|&a| a > 0.0 && a <= 1.0) {
            return bad("values must lie in (0, 1]");
        }
        if !alpha_bar.windows(2).all(|w| w[1] < w[0]) {
            return bad("must be strictly decreasing");
        }
        if alpha_bar[0] < 0.999 {
            return bad("ᾱ_0 must be at least 0.999");
        }
        if *alpha_bar.last().unwrap() >= 0.01 {
            return bad("ᾱ_T must be below 0.01");
        }
        Ok(Self { alpha_bar })
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn values(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<(), DiffusionError> {
        if t > self.steps() {
            return Err(DiffusionError::StepOutOfRange { t, max: self.steps() });
        }
        Ok(())
    }
}

/// Cosine schedule: `ᾱ_t = f(t)/f(0)` with
/// `f(t) = cos²(((t/T + s)/(1 + s)) · π/2)`, `s = 0.008`, and each per-step
/// `β_t = 1 − ᾱ_t/ᾱ_{t−1}` clamped to at most 0.999.
pub fn cosine_schedule(steps: usize) -> Result<NoiseSchedule, DiffusionError> {
    if steps < 1 {
        return Err(DiffusionError::InvalidSteps(steps));
    }
    let f = |t: usize| {
        let x = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
        (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
    };
    let f0 = f(0);
    let mut alpha_bar = Vec::with_capacity(steps + 1);
    alpha_bar.push(1.0);
    for t in 1..=steps {
        let prev = alpha_bar[t - 1];
        let beta = (1.0 - (f(t) / f0) / prev).min(MAX_BETA);
        alpha_bar.push(prev * (1.0 - beta));
    }
    NoiseSchedule::from_alpha_bar(alpha_bar)
}

/// `z_t = √ᾱ_t · x + √(1 − ᾱ_t) · ε`.
pub fn forward_diffuse(
    x: &Array2<f64>,
    t: usize,
    sched: &NoiseSchedule,
    noise: &Array2<f64>,
) -> Result<Array2<f64>, DiffusionError> {
    sched.check_step(t)?;
    if x.dim() != noise.dim() {
        return Err(DiffusionError::ShapeMismatch { left: x.dim(), right: noise.dim() });
    }
    let a = sched.alpha_bar(t);
    let (signal, sigma) = (a.sqrt(), (1.0 - a).sqrt());
    let mut z = x * signal;
    z.scaled_add(sigma, noise);
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal, SeedStream};

    /// The cosine formula evaluated independently, without the β clamp.
    fn oracle(t: usize, steps: usize) -> f64 {
        let g = |t: f64| (((t / steps as f64 + 0.008) / 1.008) * std::f64::consts::PI / 2.0).cos().powi(2);
        g(t as f64) / g(0.0)
    }

    #[test]
    fn cosine_ten_steps_matches_hand_evaluation() {
        let s = cosine_schedule(10).unwrap();
        assert_eq!(s.values().len(), 11);
        assert_eq!(s.alpha_bar(0), 1.0);
        // The clamp only binds at the last step (f(T) ≈ 0).
        for t in 0..10 {
            assert!((s.alpha_bar(t) - oracle(t, 10)).abs() < 1e-12, "t={t}");
        }
        assert!((s.alpha_bar(10) - 0.001 * s.alpha_bar(9)).abs() < 1e-15);
        assert!(s.values().iter().all(|&a| a > 0.0 && a <= 1.0));
    }

    #[test]
    fn cosine_thousand_steps() {
        let s = cosine_schedule(1000).unwrap();
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!(s.alpha_bar(1000) < 1e-3);
        assert!(s.values().windows(2).all(|w| w[1] < w[0]));
        assert!((s.alpha_bar(500) - oracle(500, 1000)).abs() < 1e-12);
    }

    #[test]
    fn schedule_invariants_for_several_lengths() {
        for steps in [1, 2, 10, 50, 1000] {
            let s = cosine_schedule(steps).unwrap();
            assert_eq!(s.steps(), steps);
            assert!(s.alpha_bar(0) >= 0.999);
            assert!(s.alpha_bar(steps) < 0.01);
            assert!(s.values().windows(2).all(|w| w[1] < w[0]));
        }
        assert_eq!(cosine_schedule(0).unwrap_err(), DiffusionError::InvalidSteps(0));
    }

    #[test]
    fn schedule_validation() {
        assert!(NoiseSchedule::from_alpha_bar(vec![1.0, 0.5, 0.5, 0.001]).is_err());
        assert!(NoiseSchedule::from_alpha_bar(vec![0.99, 0.001]).is_err());
        assert!(NoiseSchedule::from_alpha_bar(vec![1.0, 0.1]).is_err());
        assert!(NoiseSchedule::from_alpha_bar(vec![1.0, 0.0]).is_err());
        assert!(NoiseSchedule::from_alpha_bar(vec![1.0, 0.5, 0.001]).is_ok());
    }

    #[test]
    fn forward_diffuse_examples() {
        let s = cosine_schedule(50).unwrap();
        let mut rng = SeedStream::new(1).rng(0);
        let x = standard_normal(&mut rng, 6, 5);
        let eps = standard_normal(&mut rng, 6, 5);
        assert_eq!(forward_diffuse(&x, 0, &s, &eps).unwrap(), x);
        let zero = Array2::zeros((6, 5));
        let z = forward_diffuse(&x, 20, &s, &zero).unwrap();
        assert_eq!(z, &x * s.alpha_bar(20).sqrt());
        assert!(matches!(forward_diffuse(&x, 51, &s, &eps), Err(DiffusionError::StepOutOfRange { .. })));
        assert!(matches!(
            forward_diffuse(&x, 3, &s, &Array2::zeros((6, 4))),
            Err(DiffusionError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn captured_noise_inverts_forward_diffusion() {
        let s = cosine_schedule(1000).unwrap();
        let mut rng = SeedStream::new(2).rng(0);
        let x = standard_normal(&mut rng, 10, 151);
        let eps = standard_normal(&mut rng, 10, 151);
        for t in (0..1000).step_by(37) {
            let z = forward_diffuse(&x, t, &s, &eps).unwrap();
            let a = s.alpha_bar(t);
            let rec = (&z - &(&eps * (1.0 - a).sqrt())) / a.sqrt();
            let err = (&rec - &x).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
            assert!(err < 1e-5, "t={t} err={err}");
        }
    }

    #[test]
    fn terminal_marginal_is_near_unit_gaussian() {
        let s = cosine_schedule(1000).unwrap();
        let mut rng = SeedStream::new(3).rng(0);
        let x = Array2::from_elem((10_000, 1), 0.7);
        let eps = standard_normal(&mut rng, 10_000, 1);
        let z = forward_diffuse(&x, 1000, &s, &eps).unwrap();
        let mean = z.mean().unwrap();
        let var = z.mapv(|v| (v - mean).powi(2)).mean().unwrap();
        let want = 1.0 - s.alpha_bar(1000);
        assert!((var - want).abs() / want < 0.05, "var={var}");
        assert!((mean - 0.7 * s.alpha_bar(1000).sqrt()).abs() < 0.05);
    }
}
