//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the tape in reverse and returns gradients for
//! every parameter leaf, keyed by parameter name.

use crate::kernels::{self, sigmoid};
use crate::params::{Gradients, ParamStore};
use crate::tensor::Tensor;
use crate::NnError;
use std::collections::HashMap;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Lower probability bound for the binary cross-entropy term.
pub const BCE_PROB_FLOOR: f64 = 1e-7;

enum Op {
    Input,
    Param(String),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        causal: bool,
        /// `[heads, T, S]` softmax weights; masked entries are zero.
        probs: Vec<f64>,
    },
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    SumAll(Var),
    SquaredError(Var, Tensor),
    /// Binary cross-entropy of `sigmoid(logits)` against targets.
    BceLogits(Var, Tensor),
    /// KL divergence of `N(mu, exp(logvar))` from the standard normal.
    KlStdNormal(Var, Var),
    MaxConst(Var, f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Exp(_) => "exp",
            Op::Clamp(..) => "clamp",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Attention { .. } => "attention",
            Op::ConcatRows(_) => "concat_rows",
            Op::SliceRows(..) => "slice_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::SumAll(_) => "sum",
            Op::SquaredError(..) => "squared_error",
            Op::BceLogits(..) => "bce",
            Op::KlStdNormal(..) => "kl",
            Op::MaxConst(..) => "max",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// One forward pass worth of recorded operations.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: HashMap<String, Var>,
    first_non_finite: Option<(usize, &'static str)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        if self.first_non_finite.is_none() && !value.is_finite() {
            self.first_non_finite = Some((self.nodes.len(), op.name()));
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// Hash of every branch decision taken by piecewise ops: ReLU sign,
    /// active clamp side, active floor and clamped cross-entropy. Two
    /// evaluations with equal signatures lie on the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        use std::hash::{DefaultHasher, Hasher};
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => {
                    for &x in self.value(*a).data() {
                        h.write_u8((x > 0.0) as u8);
                    }
                }
                Op::Clamp(a, lo, hi) => {
                    for &x in self.value(*a).data() {
                        h.write_u8(if x < *lo { 1 } else if x > *hi { 2 } else { 0 });
                    }
                }
                Op::MaxConst(a, floor) => {
                    for &x in self.value(*a).data() {
                        h.write_u8((x > *floor) as u8);
                    }
                }
                Op::BceLogits(a, _) => {
                    for &x in self.value(*a).data() {
                        let p = sigmoid(x);
                        h.write_u8(if p < BCE_PROB_FLOOR {
                            1
                        } else if p > 1.0 - BCE_PROB_FLOOR {
                            2
                        } else {
                            0
                        });
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Errors if any recorded value contains NaN or infinity.
    pub fn check_finite(&self) -> Result<(), NnError> {
        match self.first_non_finite {
            None => Ok(()),
            Some((node, op)) => Err(NnError::NonFinite { node, op }),
        }
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    /// Parameter leaf. Repeated requests for one name share a node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Var {
        if let Some(&v) = self.param_nodes.get(name) {
            return v;
        }
        let value = store
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .clone();
        let v = self.push(value, Op::Param(name.to_string()));
        self.param_nodes.insert(name.to_string(), v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let ([n, k], [k2, m]) = (self.shape(a), self.shape(b));
        assert_eq!(k, k2, "matmul shape mismatch [{n}, {k}] x [{k2}, {m}]");
        let mut out = vec![0.0; n * m];
        kernels::matmul(self.value(a).data(), self.value(b).data(), n, k, m, &mut out);
        self.push(Tensor::new(n, m, out), Op::MatMul(a, b))
    }

    /// Adds a `[1, m]` row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let [n, m] = self.shape(a);
        assert_eq!(self.shape(bias), [1, m], "bias shape mismatch");
        let mut out = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        for i in 0..n {
            kernels::add_bias(out.row_mut(i), &b);
        }
        self.push(out, Op::AddBias(a, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let [n, m] = self.shape(a);
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        self.push(Tensor::new(n, m, data), Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(kernels::relu);
        self.push(out, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    /// Elementwise clamp; the gradient is zero where the bound is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    /// Row-wise layer normalization with `[1, d]` gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let [n, d] = self.shape(x);
        assert_eq!(self.shape(gamma), [1, d]);
        assert_eq!(self.shape(beta), [1, d]);
        let mut out = vec![0.0; n * d];
        let mut xhat = vec![0.0; n * d];
        let mut rstd = vec![0.0; n];
        {
            let (xv, g, b) = (self.value(x), self.value(gamma), self.value(beta));
            for i in 0..n {
                rstd[i] = kernels::layer_norm_row(
                    xv.row(i),
                    g.data(),
                    b.data(),
                    &mut out[i * d..(i + 1) * d],
                    &mut xhat[i * d..(i + 1) * d],
                );
            }
        }
        self.push(
            Tensor::new(n, d, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        )
    }

    /// Multi-head scaled dot-product attention of `q[T, d]` over
    /// `k, v[S, d]`. With `causal`, row `i` sees keys `0..=i` only.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Var {
        let ([t, d], [s, dk], [s2, dv]) = (self.shape(q), self.shape(k), self.shape(v));
        assert!(d == dk && d == dv && s == s2, "attention shape mismatch");
        assert!(heads > 0 && d % heads == 0, "width {d} not divisible by {heads} heads");
        assert!(!causal || t <= s, "causal attention needs T <= S");
        let mut out = vec![0.0; t * d];
        let mut probs = vec![0.0; heads * t * s];
        let mut row_probs = vec![0.0; heads * s];
        {
            let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
            for i in 0..t {
                let n = if causal { i + 1 } else { s };
                kernels::attention_row(
                    qv.row(i),
                    &kv.data()[..n * d],
                    &vv.data()[..n * d],
                    n,
                    heads,
                    &mut row_probs[..heads * n],
                    &mut out[i * d..(i + 1) * d],
                );
                for h in 0..heads {
                    probs[(h * t + i) * s..(h * t + i) * s + n]
                        .copy_from_slice(&row_probs[h * n..(h + 1) * n]);
                }
            }
        }
        self.push(
            Tensor::new(t, d, out),
            Op::Attention {
                q,
                k,
                v,
                heads,
                causal,
                probs,
            },
        )
    }

    /// Softmax weights recorded by an attention node, `[heads, T, S]`.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.shape(parts[0])[1];
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let [r, c] = self.shape(p);
            assert_eq!(c, cols, "concat_rows width mismatch");
            data.extend_from_slice(self.value(p).data());
            rows += r;
        }
        self.push(Tensor::new(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let [n, m] = self.shape(a);
        assert!(start + len <= n, "row slice out of range");
        let data = self.value(a).data()[start * m..(start + len) * m].to_vec();
        self.push(Tensor::new(len, m, data), Op::SliceRows(a, start))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let [n, m] = self.shape(a);
        assert!(start + len <= m, "column slice out of range");
        let src = self.value(a);
        let mut data = Vec::with_capacity(n * len);
        for i in 0..n {
            data.extend_from_slice(&src.row(i)[start..start + len]);
        }
        self.push(Tensor::new(n, len, data), Op::SliceCols(a, start))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    /// `Σ (a − target)²` as a scalar.
    pub fn squared_error(&mut self, a: Var, target: Tensor) -> Var {
        assert_eq!(self.shape(a), target.shape(), "target shape mismatch");
        let s = self
            .value(a)
            .data()
            .iter()
            .zip(target.data())
            .map(|(x, t)| (x - t) * (x - t))
            .sum();
        self.push(Tensor::scalar(s), Op::SquaredError(a, target))
    }

    /// Summed binary cross-entropy of `sigmoid(logits)` against `target`,
    /// with probabilities clamped to `[1e-7, 1 − 1e-7]`.
    pub fn bce_with_logits(&mut self, logits: Var, target: Tensor) -> Var {
        assert_eq!(self.shape(logits), target.shape(), "target shape mismatch");
        let s = self
            .value(logits)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&l, &t)| bce(sigmoid(l), t))
            .sum();
        self.push(Tensor::scalar(s), Op::BceLogits(logits, target))
    }

    /// `Σ −½ (1 + logvar − mu² − exp(logvar))` as a scalar.
    pub fn kl_std_normal(&mut self, mu: Var, logvar: Var) -> Var {
        assert_eq!(self.shape(mu), self.shape(logvar));
        let s = self
            .value(mu)
            .data()
            .iter()
            .zip(self.value(logvar).data())
            .map(|(&m, &lv)| -0.5 * (1.0 + lv - m * m - lv.exp()))
            .sum();
        self.push(Tensor::scalar(s), Op::KlStdNormal(mu, logvar))
    }

    /// Elementwise `max(a, floor)`; the gradient is zero where the floor wins.
    pub fn max_const(&mut self, a: Var, floor: f64) -> Var {
        let out = self.value(a).map(|x| x.max(floor));
        self.push(out, Op::MaxConst(a, floor))
    }

    /// Gradients of `root` (seeded with ones) for every parameter leaf.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..=root.0).map(|_| None).collect();
        let [r, c] = self.shape(root);
        grads[root.0] = Some(Tensor::filled(r, c, 1.0));
        let mut out = Gradients::default();

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(name) => out.accumulate(name, g),
                Op::MatMul(a, b) => {
                    let ([n, k], [_, m]) = (self.shape(*a), self.shape(*b));
                    let ga = grad_slot(&mut grads, *a, n, k);
                    kernels::matmul_nt_acc(g.data(), self.value(*b).data(), n, k, m, ga.data_mut());
                    let gb = grad_slot(&mut grads, *b, k, m);
                    kernels::matmul_tn_acc(self.value(*a).data(), g.data(), n, k, m, gb.data_mut());
                }
                Op::AddBias(a, bias) => {
                    let [n, m] = g.shape();
                    let gb = grad_slot(&mut grads, *bias, 1, m);
                    for row in 0..n {
                        kernels::add_bias(gb.data_mut(), g.row(row));
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = zip_map(&g, self.value(*b), |g, y| g * y);
                    let gb = zip_map(&g, self.value(*a), |g, x| g * x);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.map(|x| x * s)),
                Op::Relu(a) => {
                    let ga = zip_map(&g, self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = zip_map(&g, &node.value, |g, y| g * (1.0 - y * y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = zip_map(&g, &node.value, |g, y| g * y * (1.0 - y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = zip_map(&g, &node.value, |g, y| g * y);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Clamp(a, lo, hi) => {
                    let ga = zip_map(&g, self.value(*a), |g, x| {
                        if x < *lo || x > *hi {
                            0.0
                        } else {
                            g
                        }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::MaxConst(a, floor) => {
                    let ga = zip_map(&g, self.value(*a), |g, x| if x > *floor { g } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let [n, d] = g.shape();
                    let gamma_v = self.value(*gamma).data().to_vec();
                    {
                        let gg = grad_slot(&mut grads, *gamma, 1, d);
                        for i in 0..n {
                            for j in 0..d {
                                gg.data_mut()[j] += g.get(i, j) * xhat[i * d + j];
                            }
                        }
                    }
                    {
                        let gbeta = grad_slot(&mut grads, *beta, 1, d);
                        for i in 0..n {
                            kernels::add_bias(gbeta.data_mut(), g.row(i));
                        }
                    }
                    let gx = grad_slot(&mut grads, *x, n, d);
                    let mut dxhat = vec![0.0; d];
                    for i in 0..n {
                        let xh = &xhat[i * d..(i + 1) * d];
                        for j in 0..d {
                            dxhat[j] = g.get(i, j) * gamma_v[j];
                        }
                        let sum: f64 = dxhat.iter().sum();
                        let sum_xh: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
                        let row = gx.row_mut(i);
                        let df = d as f64;
                        for j in 0..d {
                            row[j] += rstd[i] / df * (df * dxhat[j] - sum - xh[j] * sum_xh);
                        }
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    causal,
                    probs,
                } => self.attention_backward(&mut grads, &g, *q, *k, *v, *heads, *causal, probs),
                Op::ConcatRows(parts) => {
                    let mut row = 0;
                    for &p in parts {
                        let [r, c] = self.shape(p);
                        let part = Tensor::new(r, c, g.data()[row * c..(row + r) * c].to_vec());
                        accumulate(&mut grads, p, part);
                        row += r;
                    }
                }
                Op::SliceRows(a, start) => {
                    let [n, m] = self.shape(*a);
                    let ga = grad_slot(&mut grads, *a, n, m);
                    let len = g.rows();
                    for (o, &x) in ga.data_mut()[start * m..(start + len) * m]
                        .iter_mut()
                        .zip(g.data())
                    {
                        *o += x;
                    }
                }
                Op::SliceCols(a, start) => {
                    let [n, m] = self.shape(*a);
                    let ga = grad_slot(&mut grads, *a, n, m);
                    let len = g.cols();
                    for i in 0..n {
                        for j in 0..len {
                            ga.data_mut()[i * m + start + j] += g.get(i, j);
                        }
                    }
                }
                Op::SumAll(a) => {
                    let [n, m] = self.shape(*a);
                    accumulate(&mut grads, *a, Tensor::filled(n, m, g.item()));
                }
                Op::SquaredError(a, target) => {
                    let s = g.item();
                    let ga = zip_map(self.value(*a), target, |x, t| 2.0 * s * (x - t));
                    accumulate(&mut grads, *a, ga);
                }
                Op::BceLogits(a, target) => {
                    let s = g.item();
                    let ga = zip_map(self.value(*a), target, |l, t| {
                        let p = sigmoid(l);
                        if !(BCE_PROB_FLOOR..=1.0 - BCE_PROB_FLOOR).contains(&p) {
                            0.0
                        } else {
                            s * (p - t)
                        }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::KlStdNormal(mu, lv) => {
                    let s = g.item();
                    let gmu = self.value(*mu).map(|m| s * m);
                    let glv = self.value(*lv).map(|l| s * 0.5 * (l.exp() - 1.0));
                    accumulate(&mut grads, *mu, gmu);
                    accumulate(&mut grads, *lv, glv);
                }
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        grads: &mut [Option<Tensor>],
        g: &Tensor,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        causal: bool,
        probs: &[f64],
    ) {
        let ([t, d], [s, _]) = (self.shape(q), self.shape(k));
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut gq = Tensor::zeros(t, d);
        let mut gk = Tensor::zeros(s, d);
        let mut gv = Tensor::zeros(s, d);
        let mut dp = vec![0.0; s];
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..t {
                let n = if causal { i + 1 } else { s };
                let p = &probs[(h * t + i) * s..(h * t + i) * s + n];
                let go = &g.row(i)[cols.clone()];
                for j in 0..n {
                    dp[j] = kernels::dot(go, &vv.row(j)[cols.clone()]);
                    let gvj = &mut gv.row_mut(j)[cols.clone()];
                    for (o, &x) in gvj.iter_mut().zip(go) {
                        *o += p[j] * x;
                    }
                }
                let inner: f64 = (0..n).map(|j| p[j] * dp[j]).sum();
                for j in 0..n {
                    let ds = p[j] * (dp[j] - inner) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for c in cols.clone() {
                        gq.data_mut()[i * d + c] += ds * kv.get(j, c);
                        gk.data_mut()[j * d + c] += ds * qv.get(i, c);
                    }
                }
            }
        }
        accumulate(grads, q, gq);
        accumulate(grads, k, gk);
        accumulate(grads, v, gv);
    }
}

/// Binary cross-entropy of probability `p` against target `t`, with `p`
/// clamped away from 0 and 1.
pub fn bce(p: f64, t: f64) -> f64 {
    let p = p.clamp(BCE_PROB_FLOOR, 1.0 - BCE_PROB_FLOOR);
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(
        a.rows(),
        a.cols(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn grad_slot(grads: &mut [Option<Tensor>], v: Var, rows: usize, cols: usize) -> &mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(rows, cols))
}
