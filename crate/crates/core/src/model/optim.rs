use ndarray::{Array2, Zip};

use super::{ModelError, Params};

/// Adan: adaptive Nesterov momentum, in the bias-corrected form of the
/// reference implementation.
#[derive(Clone, Debug, PartialEq)]
pub struct Adan {
    pub lr: f64,
    pub betas: (f64, f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    n: Vec<Array2<f64>>,
    prev_grad: Vec<Array2<f64>>,
}

impl Adan {
    pub fn new(lr: f64, params: &Params) -> Self {
        let zeros = || params.tensors().iter().map(|t| Array2::zeros(t.dim())).collect::<Vec<_>>();
        Self {
            lr,
            betas: (0.98, 0.92, 0.99),
            eps: 1e-8,
            weight_decay: 0.0,
            step: 0,
            m: zeros(),
            v: zeros(),
            n: zeros(),
            prev_grad: zeros(),
        }
    }

    fn update(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>]) {
        self.step += 1;
        let (b1, b2, b3) = self.betas;
        let k = self.step as i32;
        let (bc1, bc2, bc3) = (1.0 - b1.powi(k), 1.0 - b2.powi(k), 1.0 - b3.powi(k));
        let first = self.step == 1;
        let (lr, eps, decay) = (self.lr, self.eps, 1.0 - self.lr * self.weight_decay);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if first {
                self.prev_grad[i].assign(g);
            }
            Zip::from(p)
                .and(g)
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(&mut self.n[i])
                .and(&mut self.prev_grad[i])
                .for_each(|p, &g, m, v, n, prev| {
                    let diff = g - *prev;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * diff;
                    let u = g + b2 * diff;
                    *n = b3 * *n + (1.0 - b3) * u * u;
                    let denom = (*n / bc3).sqrt() + eps;
                    *p = *p * decay - lr * (*m / bc1 + b2 * *v / bc2) / denom;
                    *prev = g;
                });
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64, params: &Params) -> Self {
        let zeros = || params.tensors().iter().map(|t| Array2::zeros(t.dim())).collect::<Vec<_>>();
        Self { lr, betas: (0.9, 0.999), eps: 1e-8, step: 0, m: zeros(), v: zeros() }
    }

    fn update(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>]) {
        self.step += 1;
        let (b1, b2) = self.betas;
        let k = self.step as i32;
        let (bc1, bc2) = (1.0 - b1.powi(k), 1.0 - b2.powi(k));
        let (lr, eps) = (self.lr, self.eps);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            Zip::from(p).and(g).and(&mut self.m[i]).and(&mut self.v[i]).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            });
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adan,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Adan => "adan",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "adan" => Some(OptimizerKind::Adan),
            "adam" => Some(OptimizerKind::Adam),
            _ => None,
        }
    }
}

/// Either optimizer behind one interface.
#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer {
    Adan(Adan),
    Adam(Adam),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &Params) -> Self {
        match kind {
            OptimizerKind::Adan => Optimizer::Adan(Adan::new(lr, params)),
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(lr, params)),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        match self {
            Optimizer::Adan(_) => OptimizerKind::Adan,
            Optimizer::Adam(_) => OptimizerKind::Adam,
        }
    }

    pub fn lr(&self) -> f64 {
        match self {
            Optimizer::Adan(o) => o.lr,
            Optimizer::Adam(o) => o.lr,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        match self {
            Optimizer::Adan(o) => o.lr = lr,
            Optimizer::Adam(o) => o.lr = lr,
        }
    }

    pub fn steps(&self) -> u64 {
        match self {
            Optimizer::Adan(o) => o.step,
            Optimizer::Adam(o) => o.step,
        }
    }

    /// One update of `params` along `grads` (same layout as `params`).
    pub fn step(&mut self, params: &mut Params, grads: &[Array2<f64>]) -> Result<(), ModelError> {
        if grads.len() != params.len() {
            return Err(ModelError::InvalidConfig(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (g, p) in grads.iter().zip(params.tensors()) {
            if g.dim() != p.dim() {
                return Err(ModelError::ShapeMismatch { what: "gradient", expected: p.dim(), got: g.dim() });
            }
        }
        match self {
            Optimizer::Adan(o) => o.update(params.tensors_mut(), grads),
            Optimizer::Adam(o) => o.update(params.tensors_mut(), grads),
        }
        Ok(())
    }

    /// Moment buffers as named tensors, prefixed with `opt.<slot>.`.
    pub fn state_tensors(&self, names: &[String]) -> Vec<(String, &Array2<f64>)> {
        let slots: Vec<(&str, &Vec<Array2<f64>>)> = match self {
            Optimizer::Adan(o) => vec![("m", &o.m), ("v", &o.v), ("n", &o.n), ("g", &o.prev_grad)],
            Optimizer::Adam(o) => vec![("m", &o.m), ("v", &o.v)],
        };
        slots
            .into_iter()
            .flat_map(|(slot, ts)| names.iter().zip(ts).map(move |(n, t)| (format!("opt.{slot}.{n}"), t)))
            .collect()
    }

    /// Restores moment buffers and the step count saved by
    /// [`Optimizer::state_tensors`].
    pub fn restore(
        &mut self,
        steps: u64,
        names: &[String],
        lookup: &dyn Fn(&str) -> Option<Array2<f64>>,
    ) -> Result<(), ModelError> {
        let fetch = |slot: &str, target: &mut Vec<Array2<f64>>| -> Result<(), ModelError> {
            for (n, t) in names.iter().zip(target.iter_mut()) {
                let key = format!("opt.{slot}.{n}");
                let v = lookup(&key).ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {key}")))?;
                if v.dim() != t.dim() {
                    return Err(ModelError::Checkpoint(format!("tensor {key} has shape {:?}", v.dim())));
                }
                *t = v;
            }
            Ok(())
        };
        match self {
            Optimizer::Adan(o) => {
                fetch("m", &mut o.m)?;
                fetch("v", &mut o.v)?;
                fetch("n", &mut o.n)?;
                fetch("g", &mut o.prev_grad)?;
                o.step = steps;
            }
            Optimizer::Adam(o) => {
                fetch("m", &mut o.m)?;
                fetch("v", &mut o.v)?;
                o.step = steps;
            }
        }
        Ok(())
    }
}

/// Learning rate as a function of the step about to be taken (1-based).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    Constant(f64),
    /// Linear warmup to `peak`, then cosine decay to `floor` at `total`.
    Cosine { peak: f64, floor: f64, warmup: u64, total: u64 },
}

impl LrSchedule {
    pub fn at(&self, step: u64) -> f64 {
        match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::Cosine { peak, floor, warmup, total } => {
                if step <= warmup {
                    return peak * step as f64 / warmup.max(1) as f64;
                }
                let span = total.saturating_sub(warmup).max(1) as f64;
                let progress = ((step - warmup) as f64 / span).min(1.0);
                floor + 0.5 * (peak - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }

    pub fn peak(&self) -> f64 {
        match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::Cosine { peak, .. } => peak,
        }
    }
}

/// Exponential moving average of the weights: `shadow ← d·shadow + (1−d)·θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ema {
    pub decay: f64,
    shadow: Params,
}

impl Ema {
    pub fn new(decay: f64, params: &Params) -> Self {
        Self { decay, shadow: params.clone() }
    }

    pub fn from_shadow(decay: f64, shadow: Params) -> Self {
        Self { decay, shadow }
    }

    pub fn update(&mut self, params: &Params) {
        let d = self.decay;
        for (s, p) in self.shadow.tensors_mut().iter_mut().zip(params.tensors()) {
            Zip::from(s).and(p).for_each(|s, &p| *s = d * *s + (1.0 - d) * p);
        }
    }

    pub fn shadow(&self) -> &Params {
        &self.shadow
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> Params {
        Params::from_parts(vec!["w".into()], vec![Array2::from_elem((1, 1), v)])
    }

    /// Scalar re-statement of the Adan recursion.
    fn adan_oracle(grads: &[f64], lr: f64) -> f64 {
        let (b1, b2, b3, eps) = (0.98f64, 0.92f64, 0.99f64, 1e-8);
        let (mut p, mut m, mut v, mut n, mut prev) = (1.0, 0.0, 0.0, 0.0, grads[0]);
        for (k, &g) in grads.iter().enumerate() {
            let k = k as i32 + 1;
            let diff = g - prev;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * diff;
            n = b3 * n + (1.0 - b3) * (g + b2 * diff).powi(2);
            let step = (m / (1.0 - b1.powi(k)) + b2 * v / (1.0 - b2.powi(k))) / ((n / (1.0 - b3.powi(k))).sqrt() + eps);
            p -= lr * step;
            prev = g;
        }
        p
    }

    #[test]
    fn adan_matches_scalar_recursion() {
        let grads = [0.5, -0.2, 0.9, 0.1, 0.3];
        let mut p = single(1.0);
        let mut opt = Optimizer::new(OptimizerKind::Adan, 0.01, &p);
        for g in grads {
            opt.step(&mut p, &[Array2::from_elem((1, 1), g)]).unwrap();
        }
        assert!((p.tensors()[0][[0, 0]] - adan_oracle(&grads, 0.01)).abs() < 1e-14);
        assert_eq!(opt.steps(), 5);
    }

    #[test]
    fn cosine_schedule_shape() {
        let s = LrSchedule::Cosine { peak: 1.0, floor: 0.1, warmup: 10, total: 110 };
        assert_eq!(s.at(5), 0.5);
        assert_eq!(s.at(10), 1.0);
        assert!((s.at(60) - 0.55).abs() < 1e-12);
        assert!((s.at(110) - 0.1).abs() < 1e-12);
        assert!((s.at(500) - 0.1).abs() < 1e-12);
        assert_eq!(LrSchedule::Constant(0.3).at(7), 0.3);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = single(1.0);
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1, &p);
        opt.step(&mut p, &[Array2::from_elem((1, 1), 3.0)]).unwrap();
        assert!((p.tensors()[0][[0, 0]] - 0.9).abs() < 1e-9);
        assert!(opt.step(&mut p, &[Array2::zeros((2, 1))]).is_err());
    }

    #[test]
    fn both_optimizers_minimize_a_quadratic() {
        for kind in [OptimizerKind::Adan, OptimizerKind::Adam] {
            let mut p = Params::from_parts(vec!["w".into()], vec![Array2::from_shape_vec((1, 3), vec![2.0, -1.0, 0.5]).unwrap()]);
            let mut opt = Optimizer::new(kind, 0.05, &p);
            for _ in 0..2000 {
                let g = p.tensors()[0].mapv(|w| 2.0 * (w - 0.3));
                opt.step(&mut p, &[g]).unwrap();
            }
            assert!(p.tensors()[0].iter().all(|w| (w - 0.3).abs() < 1e-2), "{kind:?}: {:?}", p.tensors()[0]);
        }
    }

    #[test]
    fn ema_contracts_geometrically_toward_frozen_weights() {
        let theta = single(1.0);
        let mut ema = Ema::from_shadow(0.9, single(0.0));
        for k in 1..=10 {
            ema.update(&theta);
            let gap = ema.shadow().distance(&theta);
            assert!((gap - 0.9f64.powi(k)).abs() < 1e-12);
        }
        let mut instant = Ema::from_shadow(0.0, single(5.0));
        instant.update(&theta);
        assert_eq!(instant.shadow(), &theta);
    }

    #[test]
    fn state_round_trips_through_named_tensors() {
        let mut p = single(1.0);
        let mut opt = Optimizer::new(OptimizerKind::Adan, 0.01, &p);
        opt.step(&mut p, &[Array2::from_elem((1, 1), 0.4)]).unwrap();
        let names = p.names().to_vec();
        let saved: Vec<(String, Array2<f64>)> =
            opt.state_tensors(&names).into_iter().map(|(n, t)| (n, t.clone())).collect();
        let mut fresh = Optimizer::new(OptimizerKind::Adan, 0.01, &p);
        fresh
            .restore(opt.steps(), &names, &|k| saved.iter().find(|(n, _)| n == k).map(|(_, t)| t.clone()))
            .unwrap();
        assert_eq!(fresh, opt);
    }
}
