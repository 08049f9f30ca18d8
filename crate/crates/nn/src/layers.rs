//! Parameterized building blocks. Each block knows its parameter names,
//! can initialize them in a [`ParamStore`] and records its forward pass in a
//! [`Graph`].

use crate::graph::{Graph, Var};
use crate::kernels;
use crate::params::{xavier_uniform, ParamStore};
use crate::tensor::Tensor;
use crate::NnError;
use rand::Rng;

/// Sinusoidal positional encoding table `[len, d]`.
pub fn positional_encoding(len: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(len, d);
    for i in 0..len {
        kernels::positional_row(i, d, t.row_mut(i));
    }
    t
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub name: String,
    pub fan_in: usize,
    pub fan_out: usize,
    pub bias: bool,
}

impl Linear {
    pub fn new(name: impl Into<String>, fan_in: usize, fan_out: usize, bias: bool) -> Self {
        Self {
            name: name.into(),
            fan_in,
            fan_out,
            bias,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<(), NnError> {
        store.insert(self.weight_name(), xavier_uniform(rng, self.fan_in, self.fan_out))?;
        if self.bias {
            store.insert(self.bias_name(), Tensor::zeros(1, self.fan_out))?;
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, &self.weight_name());
        let y = g.matmul(x, w);
        if self.bias {
            let b = g.param(store, &self.bias_name());
            g.add_bias(y, b)
        } else {
            y
        }
    }

    /// Single-row evaluation matching [`Linear::forward`] bit for bit.
    pub fn apply_row(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let w = &store[&self.weight_name()];
        let mut out = vec![0.0; self.fan_out];
        kernels::matmul(x, w.data(), 1, self.fan_in, self.fan_out, &mut out);
        if self.bias {
            kernels::add_bias(&mut out, store[&self.bias_name()].data());
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub name: String,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            dim,
        }
    }

    fn names(&self) -> (String, String) {
        (format!("{}.gamma", self.name), format!("{}.beta", self.name))
    }

    pub fn init(&self, store: &mut ParamStore) -> Result<(), NnError> {
        let (g, b) = self.names();
        store.insert(g, Tensor::filled(1, self.dim, 1.0))?;
        store.insert(b, Tensor::zeros(1, self.dim))
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let (gn, bn) = self.names();
        let gamma = g.param(store, &gn);
        let beta = g.param(store, &bn);
        g.layer_norm(x, gamma, beta)
    }

    pub fn apply_row(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let (gn, bn) = self.names();
        let mut out = vec![0.0; self.dim];
        let mut xhat = vec![0.0; self.dim];
        kernels::layer_norm_row(x, store[&gn].data(), store[&bn].data(), &mut out, &mut xhat);
        out
    }
}

/// Multi-head self-attention with bias-free Q/K/V projections and a biased
/// output projection.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl SelfAttention {
    pub fn new(name: &str, d: usize, heads: usize) -> Self {
        Self {
            q: Linear::new(format!("{name}.q"), d, d, false),
            k: Linear::new(format!("{name}.k"), d, d, false),
            v: Linear::new(format!("{name}.v"), d, d, false),
            out: Linear::new(format!("{name}.o"), d, d, true),
            heads,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<(), NnError> {
        for l in [&self.q, &self.k, &self.v, &self.out] {
            l.init(store, rng)?;
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, causal: bool) -> Var {
        let q = self.q.forward(g, store, x);
        let k = self.k.forward(g, store, x);
        let v = self.v.forward(g, store, x);
        let a = g.attention(q, k, v, self.heads, causal);
        self.out.forward(g, store, a)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(name: &str, d: usize, hidden: usize) -> Self {
        Self {
            up: Linear::new(format!("{name}.up"), d, hidden, true),
            down: Linear::new(format!("{name}.down"), hidden, d, true),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<(), NnError> {
        self.up.init(store, rng)?;
        self.down.init(store, rng)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let h = self.up.forward(g, store, x);
        let h = g.relu(h);
        self.down.forward(g, store, h)
    }

    pub fn apply_row(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = self
            .up
            .apply_row(store, x)
            .into_iter()
            .map(kernels::relu)
            .collect();
        self.down.apply_row(store, &h)
    }
}

/// Pre-norm residual block: `x + MHA(LN(x))`, then `+ FFN(LN(·))`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerLayer {
    pub norm1: LayerNorm,
    pub attn: SelfAttention,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
}

impl TransformerLayer {
    pub fn new(name: &str, d: usize, heads: usize, ffn_dim: usize) -> Self {
        Self {
            norm1: LayerNorm::new(format!("{name}.ln1"), d),
            attn: SelfAttention::new(&format!("{name}.attn"), d, heads),
            norm2: LayerNorm::new(format!("{name}.ln2"), d),
            ffn: FeedForward::new(&format!("{name}.ffn"), d, ffn_dim),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<(), NnError> {
        self.norm1.init(store)?;
        self.attn.init(store, rng)?;
        self.norm2.init(store)?;
        self.ffn.init(store, rng)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, causal: bool) -> Var {
        let h = self.norm1.forward(g, store, x);
        let a = self.attn.forward(g, store, h, causal);
        let x = g.add(x, a);
        let h = self.norm2.forward(g, store, x);
        let f = self.ffn.forward(g, store, h);
        g.add(x, f)
    }
}

/// A stack of transformer layers followed by a final layer norm.
#[derive(Clone, Debug, PartialEq)]
pub struct Transformer {
    pub layers: Vec<TransformerLayer>,
    pub norm: LayerNorm,
    pub d_model: usize,
    pub heads: usize,
}

impl Transformer {
    pub fn new(name: &str, n_layers: usize, d: usize, heads: usize, ffn_dim: usize) -> Self {
        Self {
            layers: (0..n_layers)
                .map(|i| TransformerLayer::new(&format!("{name}.layer{i}"), d, heads, ffn_dim))
                .collect(),
            norm: LayerNorm::new(format!("{name}.ln_final"), d),
            d_model: d,
            heads,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<(), NnError> {
        for l in &self.layers {
            l.init(store, rng)?;
        }
        self.norm.init(store)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, causal: bool) -> Var {
        let mut h = x;
        for l in &self.layers {
            h = l.forward(g, store, h, causal);
        }
        self.norm.forward(g, store, h)
    }
}

/// Per-layer key/value rows accumulated during incremental causal decoding.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvCache {
    pub keys: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
}

impl KvCache {
    pub fn for_layers(n: usize) -> Vec<KvCache> {
        vec![KvCache::default(); n]
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

impl Transformer {
    /// Feeds one more row through the causal stack, appending to `cache`, and
    /// returns the normalized output row. The result equals the last row of
    /// [`Transformer::forward`] with `causal = true` on the full prefix.
    pub fn step(&self, store: &ParamStore, cache: &mut [KvCache], x: &[f64]) -> Vec<f64> {
        assert_eq!(cache.len(), self.layers.len());
        let d = self.d_model;
        let mut h = x.to_vec();
        for (layer, kv) in self.layers.iter().zip(cache.iter_mut()) {
            let n1 = layer.norm1.apply_row(store, &h);
            let q = layer.attn.q.apply_row(store, &n1);
            kv.keys.push(layer.attn.k.apply_row(store, &n1));
            kv.values.push(layer.attn.v.apply_row(store, &n1));
            let n = kv.len();
            let keys: Vec<f64> = kv.keys.concat();
            let values: Vec<f64> = kv.values.concat();
            let mut probs = vec![0.0; layer.attn.heads * n];
            let mut a = vec![0.0; d];
            kernels::attention_row(&q, &keys, &values, n, layer.attn.heads, &mut probs, &mut a);
            let a = layer.attn.out.apply_row(store, &a);
            for (hv, av) in h.iter_mut().zip(&a) {
                *hv += av;
            }
            let n2 = layer.norm2.apply_row(store, &h);
            let f = layer.ffn.apply_row(store, &n2);
            for (hv, fv) in h.iter_mut().zip(&f) {
                *hv += fv;
            }
        }
        self.norm.apply_row(store, &h)
    }
}
