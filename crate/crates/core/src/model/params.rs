use ndarray::Array2;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::rng::Rng;

/// Named parameter tensors, in a fixed order derived from the config.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    names: Vec<String>,
    tensors: Vec<Array2<f64>>,
}

impl Params {
    pub fn from_parts(names: Vec<String>, tensors: Vec<Array2<f64>>) -> Self {
        assert_eq!(names.len(), tensors.len());
        Self { names, tensors }
    }

    pub fn zeros_like(other: &Params) -> Self {
        Self {
            names: other.names.clone(),
            tensors: other.tensors.iter().map(|t| Array2::zeros(t.dim())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Array2::len).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Array2<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    /// Euclidean distance between two parameter sets of the same layout.
    pub fn distance(&self, other: &Params) -> f64 {
        self.tensors
            .iter()
            .zip(&other.tensors)
            .map(|(a, b)| (a - b).mapv(|v| v * v).sum())
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Init {
    Normal(f64),
    Zeros,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct AttnIdx {
    pub q: usize,
    pub k: usize,
    pub v: usize,
    pub o_w: usize,
    pub o_b: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LayerIdx {
    pub self_attn: AttnIdx,
    pub cross_attn: AttnIdx,
    pub ff1_w: usize,
    pub ff1_b: usize,
    pub ff2_w: usize,
    pub ff2_b: usize,
    /// Maps the timestep embedding to scale and shift for the three blocks.
    pub film_w: usize,
    pub film_b: usize,
}

/// Positions of every parameter in [`Params`].
#[derive(Clone, Debug)]
pub(crate) struct ParamIndex {
    pub in_w: usize,
    pub in_b: usize,
    pub pos: usize,
    pub cond_w: usize,
    pub cond_b: usize,
    pub cond_pos: usize,
    pub null: usize,
    pub time_w1: usize,
    pub time_b1: usize,
    pub time_w2: usize,
    pub time_b2: usize,
    pub layers: Vec<LayerIdx>,
    pub out_w: usize,
    pub out_b: usize,
}

/// Name, shape and initializer of one parameter.
type ParamSpec = (String, (usize, usize), Init);

struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn add(&mut self, name: String, shape: (usize, usize), init: Init) -> usize {
        self.specs.push((name, shape, init));
        self.specs.len() - 1
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> (usize, usize) {
        let w = self.add(format!("{prefix}.w"), (fan_in, fan_out), Init::Normal(1.0 / (fan_in as f64).sqrt()));
        let b = self.add(format!("{prefix}.b"), (1, fan_out), Init::Zeros);
        (w, b)
    }

    fn attention(&mut self, prefix: &str, d: usize) -> AttnIdx {
        let std = Init::Normal(1.0 / (d as f64).sqrt());
        let q = self.add(format!("{prefix}.q"), (d, d), std);
        let k = self.add(format!("{prefix}.k"), (d, d), std);
        let v = self.add(format!("{prefix}.v"), (d, d), std);
        let (o_w, o_b) = self.linear(&format!("{prefix}.o"), d, d);
        AttnIdx { q, k, v, o_w, o_b }
    }
}

impl ParamIndex {
    pub fn build(cfg: &ModelConfig) -> (Self, Vec<ParamSpec>) {
        let d = cfg.model_dim;
        let mut b = Builder { specs: Vec::new() };
        let (in_w, in_b) = b.linear("input", cfg.pose_dim, d);
        let pos = b.add("input.pos".into(), (cfg.seq_len, d), Init::Normal(0.02));
        let (cond_w, cond_b) = b.linear("cond", cfg.cond_dim, d);
        let cond_pos = b.add("cond.pos".into(), (cfg.seq_len, d), Init::Normal(0.02));
        let null = b.add("cond.null".into(), (1, d), Init::Normal(0.02));
        let (time_w1, time_b1) = b.linear("time.0", d, d);
        let (time_w2, time_b2) = b.linear("time.1", d, d);
        let layers = (0..cfg.layers)
            .map(|l| {
                let self_attn = b.attention(&format!("layer{l}.self"), d);
                let cross_attn = b.attention(&format!("layer{l}.cross"), d);
                let (ff1_w, ff1_b) = b.linear(&format!("layer{l}.ff.0"), d, cfg.mlp_dim);
                let (ff2_w, ff2_b) = b.linear(&format!("layer{l}.ff.1"), cfg.mlp_dim, d);
                // Zero init makes every FiLM start as the identity.
                let film_w = b.add(format!("layer{l}.film.w"), (d, 6 * d), Init::Zeros);
                let film_b = b.add(format!("layer{l}.film.b"), (1, 6 * d), Init::Zeros);
                LayerIdx { self_attn, cross_attn, ff1_w, ff1_b, ff2_w, ff2_b, film_w, film_b }
            })
            .collect();
        let (out_w, out_b) = b.linear("output", d, cfg.pose_dim);
        let idx = Self {
            in_w,
            in_b,
            pos,
            cond_w,
            cond_b,
            cond_pos,
            null,
            time_w1,
            time_b1,
            time_w2,
            time_b2,
            layers,
            out_w,
            out_b,
        };
        (idx, b.specs)
    }
}

pub(crate) fn init_params(cfg: &ModelConfig, rng: &mut Rng) -> Params {
    let (_, specs) = ParamIndex::build(cfg);
    let mut names = Vec::with_capacity(specs.len());
    let mut tensors = Vec::with_capacity(specs.len());
    for (name, shape, init) in specs {
        let t = match init {
            Init::Zeros => Array2::zeros(shape),
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("positive std");
                Array2::from_shape_simple_fn(shape, || dist.sample(rng))
            }
        };
        names.push(name);
        tensors.push(t);
    }
    Params { names, tensors }
}

/// Parameter names and shapes implied by a config, for checkpoint checks.
pub(crate) fn expected_shapes(cfg: &ModelConfig) -> Vec<(String, (usize, usize))> {
    ParamIndex::build(cfg).1.into_iter().map(|(n, s, _)| (n, s)).collect()
}
