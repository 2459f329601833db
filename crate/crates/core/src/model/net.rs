use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use rayon::prelude::*;

use super::params::{expected_shapes, init_params, AttnIdx, ParamIndex};
use super::{ModelConfig, ModelError, Params};
use crate::diffusion::{Denoiser, DiffusionError};
use crate::rng::Rng;
use crate::tape::{Tape, Var};

const LN_EPS: f64 = 1e-5;

/// Sinusoidal features of the diffusion step, `1 × dim`: sines in the first
/// half, cosines in the second, geometric frequencies from 1 down to 1/10000.
pub fn timestep_embedding(t: usize, dim: usize) -> Array2<f64> {
    let half = dim / 2;
    let mut out = Array2::zeros((1, dim));
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[[0, k]] = arg.sin();
        out[[0, half + k]] = arg.cos();
    }
    out
}

/// The denoiser `x̂_θ(z_t, t, c)`: a transformer decoder over motion frames
/// that cross-attends to the projected conditioning, with the timestep
/// injected as a context token and through per-block FiLM.
#[derive(Clone, Debug)]
pub struct DanceDenoiser {
    config: ModelConfig,
    params: Params,
    index: ParamIndex,
}

fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Var {
    let y = tape.matmul(x, w);
    tape.add_row(y, b)
}

/// Inverted dropout with a fixed mask drawn from `rng`.
fn dropout(tape: &mut Tape, x: Var, p: f64, rng: &mut Option<&mut Rng>) -> Var {
    match rng {
        Some(rng) if p > 0.0 => {
            let keep = 1.0 / (1.0 - p);
            let mask = Array2::from_shape_simple_fn(tape.shape(x), || if rng.random::<f64>() < p { 0.0 } else { keep });
            let m = tape.leaf(mask);
            tape.mul(x, m)
        }
        _ => x,
    }
}

impl DanceDenoiser {
    /// Randomly initialized model.
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self, ModelError> {
        config.validate()?;
        let params = init_params(&config, rng);
        let (index, _) = ParamIndex::build(&config);
        Ok(Self { config, params, index })
    }

    /// Model with the given parameters, which must match the config layout.
    pub fn from_params(config: ModelConfig, params: Params) -> Result<Self, ModelError> {
        config.validate()?;
        let expected = expected_shapes(&config);
        if expected.len() != params.len() {
            return Err(ModelError::Checkpoint(format!(
                "config implies {} tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, shape), (got_name, t)) in expected.iter().zip(params.names().iter().zip(params.tensors())) {
            if name != got_name || *shape != t.dim() {
                return Err(ModelError::Checkpoint(format!(
                    "expected tensor {name} {shape:?}, found {got_name} {:?}",
                    t.dim()
                )));
            }
        }
        let (index, _) = ParamIndex::build(&config);
        Ok(Self { config, params, index })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    /// Same architecture with other weights (e.g. the EMA shadow).
    pub fn with_params(&self, params: Params) -> Result<Self, ModelError> {
        Self::from_params(self.config.clone(), params)
    }

    /// Puts every parameter on the tape as a leaf.
    pub(crate) fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.tensors().iter().map(|t| tape.leaf(t.clone())).collect()
    }

    pub(crate) fn check_inputs(&self, z: (usize, usize), cond: Option<ArrayView2<'_, f64>>) -> Result<(), ModelError> {
        let (n, d) = z;
        if n == 0 || n > self.config.seq_len || d != self.config.pose_dim {
            return Err(ModelError::ShapeMismatch {
                what: "noisy motion",
                expected: (n.clamp(1, self.config.seq_len), self.config.pose_dim),
                got: z,
            });
        }
        if let Some(c) = cond {
            if c.dim() != (n, self.config.cond_dim) {
                return Err(ModelError::ShapeMismatch {
                    what: "conditioning",
                    expected: (n, self.config.cond_dim),
                    got: c.dim(),
                });
            }
        }
        Ok(())
    }

    fn attention(&self, tape: &mut Tape, p: &[Var], a: AttnIdx, x: Var, ctx: Var) -> Var {
        let heads = self.config.heads;
        let dh = self.config.model_dim / heads;
        let q = tape.matmul(x, p[a.q]);
        let k = tape.matmul(ctx, p[a.k]);
        let v = tape.matmul(ctx, p[a.v]);
        let scale = 1.0 / (dh as f64).sqrt();
        let outs: Vec<Var> = (0..heads)
            .map(|h| {
                let qh = tape.slice_cols(q, h * dh, dh);
                let kh = tape.slice_cols(k, h * dh, dh);
                let vh = tape.slice_cols(v, h * dh, dh);
                let s = tape.matmul_bt(qh, kh);
                let s = tape.scale(s, scale);
                let w = tape.softmax_rows(s);
                tape.matmul(w, vh)
            })
            .collect();
        let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs) };
        linear(tape, cat, p[a.o_w], p[a.o_b])
    }

    /// `h · (1 + scale) + shift` with scale and shift taken from block `k`
    /// of the FiLM output.
    fn film(&self, tape: &mut Tape, h: Var, film: Var, k: usize) -> Var {
        let d = self.config.model_dim;
        let scale = tape.slice_cols(film, 2 * k * d, d);
        let shift = tape.slice_cols(film, (2 * k + 1) * d, d);
        let scale = tape.add_scalar(scale, 1.0);
        let h = tape.mul_row(h, scale);
        tape.add_row(h, shift)
    }

    /// Builds `x̂` on `tape` from the bound parameters `p`. Dropout is active
    /// only when `dropout_rng` is given.
    pub(crate) fn forward(
        &self,
        tape: &mut Tape,
        p: &[Var],
        z: Var,
        t: usize,
        cond: Option<&Array2<f64>>,
        mut dropout_rng: Option<&mut Rng>,
    ) -> Result<Var, ModelError> {
        self.check_inputs(tape.shape(z), cond.map(|c| c.view()))?;
        let ix = &self.index;
        let n = tape.shape(z).0;
        let d = self.config.model_dim;
        let drop_p = self.config.dropout;

        let h = linear(tape, z, p[ix.in_w], p[ix.in_b]);
        let pos = tape.slice_rows(p[ix.pos], 0, n);
        let mut h = tape.add(h, pos);

        let te = tape.leaf(timestep_embedding(t, d));
        let te = linear(tape, te, p[ix.time_w1], p[ix.time_b1]);
        let te = tape.silu(te);
        let te = linear(tape, te, p[ix.time_w2], p[ix.time_b2]);

        let ctx = match cond {
            Some(c) => {
                let c = tape.leaf(c.clone());
                let c = linear(tape, c, p[ix.cond_w], p[ix.cond_b]);
                let cpos = tape.slice_rows(p[ix.cond_pos], 0, n);
                let c = tape.add(c, cpos);
                tape.concat_rows(&[te, c])
            }
            None => tape.concat_rows(&[te, p[ix.null]]),
        };
        let te_act = tape.silu(te);

        for layer in &ix.layers {
            let film = linear(tape, te_act, p[layer.film_w], p[layer.film_b]);

            let a = tape.layer_norm(h, LN_EPS);
            let a = self.attention(tape, p, layer.self_attn, a, a);
            let a = dropout(tape, a, drop_p, &mut dropout_rng);
            let a = self.film(tape, a, film, 0);
            h = tape.add(h, a);

            let a = tape.layer_norm(h, LN_EPS);
            let a = self.attention(tape, p, layer.cross_attn, a, ctx);
            let a = dropout(tape, a, drop_p, &mut dropout_rng);
            let a = self.film(tape, a, film, 1);
            h = tape.add(h, a);

            let a = tape.layer_norm(h, LN_EPS);
            let a = linear(tape, a, p[layer.ff1_w], p[layer.ff1_b]);
            let a = tape.gelu(a);
            let a = linear(tape, a, p[layer.ff2_w], p[layer.ff2_b]);
            let a = dropout(tape, a, drop_p, &mut dropout_rng);
            let a = self.film(tape, a, film, 2);
            h = tape.add(h, a);
        }
        // The residual stream feeds the output projection directly; a final
        // normalization caps how closely a single clip can be fitted.
        Ok(linear(tape, h, p[ix.out_w], p[ix.out_b]))
    }

    /// Evaluation-mode prediction of the clean clip.
    pub fn denoise(&self, z: &Array2<f64>, t: usize, cond: Option<&Array2<f64>>) -> Result<Array2<f64>, ModelError> {
        self.check_inputs(z.dim(), cond.map(|c| c.view()))?;
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let zv = tape.leaf(z.clone());
        let out = self.forward(&mut tape, &p, zv, t, cond, None)?;
        let out = tape.value(out).clone();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteActivation(format!("denoiser output at t={t}")));
        }
        Ok(out)
    }
}

impl Denoiser for DanceDenoiser {
    fn predict(&self, z: &Array2<f64>, t: usize, cond: Option<&Array2<f64>>) -> Result<Array2<f64>, DiffusionError> {
        Ok(self.denoise(z, t, cond)?)
    }

    fn predict_batch(
        &self,
        zs: &[Array2<f64>],
        t: usize,
        conds: &[Option<&Array2<f64>>],
    ) -> Result<Vec<Array2<f64>>, DiffusionError> {
        zs.par_iter().zip(conds.par_iter()).map(|(z, c)| self.predict(z, t, *c)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal, SeedStream};

    fn tiny() -> ModelConfig {
        ModelConfig {
            layers: 2,
            heads: 2,
            model_dim: 16,
            mlp_dim: 24,
            seq_len: 12,
            ..ModelConfig::desk(5)
        }
    }

    fn model() -> DanceDenoiser {
        let mut m = DanceDenoiser::new(tiny(), &mut SeedStream::new(1).rng(0)).unwrap();
        // Non-zero FiLM so the timestep path is exercised.
        let mut rng = SeedStream::new(2).rng(0);
        for (name, t) in m.params.names().to_vec().iter().zip(m.params.tensors_mut()) {
            if name.contains("film") {
                *t = standard_normal(&mut rng, t.nrows(), t.ncols()) * 0.1;
            }
        }
        m
    }

    #[test]
    fn embedding_matches_formula() {
        let e = timestep_embedding(7, 8);
        assert!((e[[0, 0]] - 7f64.sin()).abs() < 1e-15);
        assert!((e[[0, 4]] - 7f64.cos()).abs() < 1e-15);
        let f1 = (-(10_000f64.ln()) / 4.0).exp();
        assert!((e[[0, 1]] - (7.0 * f1).sin()).abs() < 1e-15);
    }

    #[test]
    fn shapes_and_determinism() {
        let m = model();
        let mut rng = SeedStream::new(3).rng(0);
        for n in [1, 5, 12] {
            let z = standard_normal(&mut rng, n, 151);
            let c = standard_normal(&mut rng, n, 5);
            assert_eq!(m.denoise(&z, 3, Some(&c)).unwrap().dim(), (n, 151));
            assert_eq!(m.denoise(&z, 3, None).unwrap(), m.denoise(&z, 3, None).unwrap());
        }
        let z = standard_normal(&mut rng, 13, 151);
        assert!(matches!(m.denoise(&z, 1, None), Err(ModelError::ShapeMismatch { .. })));
        let z = standard_normal(&mut rng, 6, 151);
        let c = standard_normal(&mut rng, 5, 5);
        assert!(matches!(m.denoise(&z, 1, Some(&c)), Err(ModelError::ShapeMismatch { .. })));
    }

    #[test]
    fn conditioning_order_timestep_and_null_all_matter() {
        let m = model();
        let mut rng = SeedStream::new(4).rng(0);
        let z = standard_normal(&mut rng, 8, 151);
        let c = standard_normal(&mut rng, 8, 5);
        let mut reversed = c.clone();
        reversed.invert_axis(ndarray::Axis(0));
        let base = m.denoise(&z, 10, Some(&c)).unwrap();
        assert_ne!(base, m.denoise(&z, 10, Some(&reversed)).unwrap());
        assert_ne!(base, m.denoise(&z, 11, Some(&c)).unwrap());
        assert_ne!(base, m.denoise(&z, 10, None).unwrap());
    }

    #[test]
    fn batch_prediction_matches_sequential() {
        let m = model();
        let mut rng = SeedStream::new(5).rng(0);
        let zs: Vec<_> = (0..4).map(|_| standard_normal(&mut rng, 6, 151)).collect();
        let c = standard_normal(&mut rng, 6, 5);
        let conds = [Some(&c), None, Some(&c), None];
        let batch = m.predict_batch(&zs, 4, &conds).unwrap();
        for (k, z) in zs.iter().enumerate() {
            assert_eq!(batch[k], m.predict(z, 4, conds[k]).unwrap());
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let m = model();
        let mut rng = SeedStream::new(6).rng(0);
        let z = standard_normal(&mut rng, 4, 151);
        let c = standard_normal(&mut rng, 4, 5);
        let target = standard_normal(&mut rng, 4, 151);
        let loss_of = |m: &DanceDenoiser| -> f64 {
            let out = m.denoise(&z, 5, Some(&c)).unwrap();
            (&out - &target).mapv(|v| v * v).mean().unwrap()
        };
        let mut tape = Tape::new();
        let p = m.bind(&mut tape);
        let zv = tape.leaf(z.clone());
        let out = m.forward(&mut tape, &p, zv, 5, Some(&c), None).unwrap();
        let tv = tape.leaf(target.clone());
        let diff = tape.sub(out, tv);
        let sq = tape.square(diff);
        let loss = tape.mean(sq);
        let grads = tape.backward(loss);
        let h = 1e-6;
        for name in ["input.w", "cond.pos", "layer1.cross.k", "layer0.film.w", "time.0.w", "output.b"] {
            let i = m.params.names().iter().position(|n| n == name).unwrap();
            let g = grads.get(p[i]).unwrap();
            let last = (g.nrows() - 1, g.ncols() - 1);
            for &(r, col) in &[(0usize, 0usize), last] {
                let mut plus = m.clone();
                plus.params.tensors_mut()[i][[r, col]] += h;
                let mut minus = m.clone();
                minus.params.tensors_mut()[i][[r, col]] -= h;
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let an = g[[r, col]];
                assert!((fd - an).abs() <= 1e-6 + 1e-4 * fd.abs().max(an.abs()), "{name}[{r},{col}] fd={fd} an={an}");
            }
        }
    }
}
