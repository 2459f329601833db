//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every value on a [`Tape`] is a 2-D array. Vectors are represented as
//! `1 × m` rows or `n × 1` columns, scalars as `1 × 1`. Operations append a
//! node and return a [`Var`] handle; [`Tape::backward`] walks the nodes in
//! reverse creation order and accumulates adjoints.
//!
//! The op set is deliberately small: what the transformer denoiser and the
//! kinematic losses need, nothing else.

use ndarray::{s, Array2, Axis};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    DivCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Sigmoid(Var),
    Silu(Var),
    Gelu(Var),
    Sqrt(Var),
    Square(Var),
    SoftmaxRows(Var),
    LayerNorm(Var, f64),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    SumCols(Var),
    Sum(Var),
    Cross(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`]. Only leaf
/// gradients are retained.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, or `None` if `v` does not
    /// influence the loss.
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn cross_rows(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), 3));
    for ((mut o, ra), rb) in out.outer_iter_mut().zip(a.outer_iter()).zip(b.outer_iter()) {
        o[0] = ra[1] * rb[2] - ra[2] * rb[1];
        o[1] = ra[2] * rb[0] - ra[0] * rb[2];
        o[2] = ra[0] * rb[1] - ra[1] * rb[0];
    }
    out
}

fn layer_norm_rows(x: &Array2<f64>, eps: f64) -> Array2<f64> {
    let m = x.ncols() as f64;
    let mut out = x.clone();
    for mut row in out.outer_iter_mut() {
        let mean = row.sum() / m;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / m;
        let inv = 1.0 / (var + eps).sqrt();
        row.mapv_inplace(|v| v * inv);
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant_scalar(&mut self, c: f64) -> Var {
        self.leaf(Array2::from_elem((1, 1), c))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// `a (n×m) + b (1×m)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::AddRow(a, b))
    }

    /// `a (n×m) ⊙ b (1×m)` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::MulRow(a, b))
    }

    /// `a (n×m) ⊙ b (n×1)` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::MulCol(a, b))
    }

    /// `a (n×m) / b (n×1)` broadcast over columns.
    pub fn div_col(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) / self.value(b);
        self.push(v, Op::DivCol(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.push(v, Op::AddScalar(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulBt(a, b))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * sigmoid(x));
        self.push(v, Op::Silu(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.outer_iter_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Per-row standardization to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let v = layer_norm_rows(self.value(a), eps);
        self.push(v, Op::LayerNorm(a, eps))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start))
    }

    /// Row sums, `n×m → n×1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::SumCols(a))
    }

    /// Sum of all entries, `→ 1×1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Row-wise cross product of two `n×3` matrices.
    pub fn cross(&mut self, a: Var, b: Var) -> Var {
        let v = cross_rows(self.value(a), self.value(b));
        self.push(v, Op::Cross(a, b))
    }

    /// Reverse pass from a scalar `loss` node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward expects a scalar loss");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, -&g);
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, &g * self.value(*b));
                    acc(&mut grads, *b, &g * self.value(*a));
                }
                Op::AddRow(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::MulRow(a, b) => {
                    acc(&mut grads, *a, &g * self.value(*b));
                    let gb = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *b, gb);
                }
                Op::MulCol(a, b) => {
                    acc(&mut grads, *a, &g * self.value(*b));
                    let gb = (&g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&mut grads, *b, gb);
                }
                Op::DivCol(a, b) => {
                    let bv = self.value(*b);
                    acc(&mut grads, *a, &g / bv);
                    // d(a/b)/db = -a/b² = -out/b
                    let gb = -(&g * &node.value / bv).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, &g * *c),
                Op::AddScalar(a) => acc(&mut grads, *a, g.clone()),
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, g.dot(&self.value(*b).t()));
                    acc(&mut grads, *b, self.value(*a).t().dot(&g));
                }
                Op::MatMulBt(a, b) => {
                    acc(&mut grads, *a, g.dot(self.value(*b)));
                    acc(&mut grads, *b, g.t().dot(self.value(*a)));
                }
                Op::Sigmoid(a) => {
                    let d = node.value.mapv(|y| y * (1.0 - y));
                    acc(&mut grads, *a, &g * &d);
                }
                Op::Silu(a) => {
                    let d = self.value(*a).mapv(|x| {
                        let s = sigmoid(x);
                        s * (1.0 + x * (1.0 - s))
                    });
                    acc(&mut grads, *a, &g * &d);
                }
                Op::Gelu(a) => {
                    let d = self.value(*a).mapv(gelu_grad);
                    acc(&mut grads, *a, &g * &d);
                }
                Op::Sqrt(a) => {
                    let d = node.value.mapv(|y| 0.5 / y);
                    acc(&mut grads, *a, &g * &d);
                }
                Op::Square(a) => acc(&mut grads, *a, &g * &self.value(*a).mapv(|x| 2.0 * x)),
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let dot = (&g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&mut grads, *a, y * &(&g - &dot));
                }
                Op::LayerNorm(a, eps) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let m = x.ncols() as f64;
                    let mut gx = Array2::zeros(x.dim());
                    for (((mut gr, xr), yr), dr) in gx
                        .outer_iter_mut()
                        .zip(x.outer_iter())
                        .zip(y.outer_iter())
                        .zip(g.outer_iter())
                    {
                        let mean = xr.sum() / m;
                        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
                        let inv = 1.0 / (var + eps).sqrt();
                        let mean_d = dr.sum() / m;
                        let mean_dy = dr.iter().zip(yr.iter()).map(|(d, y)| d * y).sum::<f64>() / m;
                        for ((o, d), yv) in gr.iter_mut().zip(dr.iter()).zip(yr.iter()) {
                            *o = inv * (d - mean_d - yv * mean_dy);
                        }
                    }
                    acc(&mut grads, *a, gx);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let n = self.value(p).nrows();
                        acc(&mut grads, p, g.slice(s![start..start + n, ..]).to_owned());
                        start += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let n = self.value(p).ncols();
                        acc(&mut grads, p, g.slice(s![.., start..start + n]).to_owned());
                        start += n;
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::SumCols(a) => {
                    let ga = Array2::from_shape_fn(self.value(*a).dim(), |(i, _)| g[[i, 0]]);
                    acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    acc(&mut grads, *a, Array2::from_elem(self.value(*a).dim(), g[[0, 0]]));
                }
                Op::Cross(a, b) => {
                    acc(&mut grads, *a, cross_rows(self.value(*b), &g));
                    acc(&mut grads, *b, cross_rows(&g, self.value(*a)));
                }
            }
            if let Op::Leaf = node.op {
                grads[idx] = Some(g);
            }
        }
        Gradients { grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central-difference check of d(build(x))/dx for a scalar-valued graph.
    fn check(x0: Array2<f64>, build: impl Fn(&mut Tape, Var) -> Var) {
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let y = build(&mut tape, x);
        let grads = tape.backward(y);
        let analytic = grads.get(x).unwrap().clone();
        let h = 1e-6;
        for idx in 0..x0.len() {
            let (r, c) = (idx / x0.ncols(), idx % x0.ncols());
            let eval = |delta: f64| {
                let mut xp = x0.clone();
                xp[[r, c]] += delta;
                let mut t = Tape::new();
                let v = t.leaf(xp);
                let out = build(&mut t, v);
                t.scalar(out)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic[[r, c]];
            assert!(
                (a - numeric).abs() <= 1e-6 * (1.0 + numeric.abs()),
                "entry ({r},{c}): analytic {a} vs numeric {numeric}"
            );
        }
    }

    fn sample() -> Array2<f64> {
        array![[0.3, -1.2, 0.7], [1.1, 0.4, -0.5], [-0.8, 0.9, 0.2]]
    }

    #[test]
    fn elementwise_ops() {
        check(sample(), |t, x| {
            let a = t.sigmoid(x);
            let b = t.gelu(x);
            let c = t.silu(x);
            let ab = t.mul(a, b);
            let abc = t.sub(ab, c);
            let sq = t.square(abc);
            t.sum(sq)
        });
    }

    #[test]
    fn matmul_softmax_layernorm() {
        let w = array![[0.2, -0.1], [0.5, 0.3], [-0.4, 0.8]];
        check(sample(), move |t, x| {
            let wv = t.leaf(w.clone());
            let xw = t.matmul(x, wv);
            let scores = t.matmul_bt(x, x);
            let p = t.softmax_rows(scores);
            let ctx = t.matmul(p, xw);
            let ln = t.layer_norm(ctx, 1e-5);
            let sq = t.square(ln);
            let scaled = t.mul(sq, ctx);
            t.sum(scaled)
        });
    }

    #[test]
    fn broadcast_slice_concat_cross() {
        check(sample(), |t, x| {
            let row = t.slice_rows(x, 0, 1);
            let col = t.slice_cols(x, 1, 1);
            let shifted = t.add_row(x, row);
            let scaled = t.mul_row(shifted, row);
            let mc = t.mul_col(scaled, col);
            let sq = t.square(x);
            let norms = t.sum_cols(sq);
            let norms = t.add_scalar(norms, 0.5);
            let norms = t.sqrt(norms);
            let unit = t.div_col(mc, norms);
            let cr = t.cross(unit, x);
            let cat = t.concat_rows(&[cr, unit]);
            let cat2 = t.concat_cols(&[cat, cat]);
            let sc = t.scale(cat2, 0.7);
            let m = t.mean(sc);
            let sq = t.square(m);
            t.add(sq, m)
        });
    }

    #[test]
    fn unused_leaf_has_no_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(array![[1.0]]);
        let b = t.leaf(array![[2.0]]);
        let y = t.square(a);
        let g = t.backward(y);
        assert_eq!(g.get(a).unwrap()[[0, 0]], 2.0);
        assert!(g.get(b).is_none());
    }
}
