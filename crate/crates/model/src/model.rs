use crate::config::ModelConfig;
use crate::{ModelError, Result};
use loopforge_core::{LoopSequence, LoopToken};
use loopforge_nn::kernels;
use loopforge_nn::layers::{positional_encoding, Linear, Transformer};
use loopforge_nn::{Gradients, Graph, ParamStore, Tensor, Var};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Bounds applied to the predicted log-variance.
pub const LOGVAR_MIN: f64 = -20.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// Name of the learned aggregate slot prepended to encoder inputs.
const SPECIAL: &str = "enc.special";

/// Fully connected stack with ReLU between layers and an optional final tanh.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub final_tanh: bool,
}

impl Mlp {
    /// `sizes` lists the input width, the hidden widths and the output width.
    pub fn new(name: &str, sizes: &[usize], final_tanh: bool) -> Self {
        Self {
            layers: sizes
                .windows(2)
                .enumerate()
                .map(|(i, w)| Linear::new(format!("{name}.l{i}"), w[0], w[1], true))
                .collect(),
            final_tanh,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        for l in &self.layers {
            l.init(store, rng)?;
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(g, store, h);
            if i < last {
                h = g.relu(h);
            } else if self.final_tanh {
                h = g.tanh(h);
            }
        }
        h
    }

    pub fn apply_row(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.apply_row(store, &h);
            if i < last {
                h.iter_mut().for_each(|v| *v = kernels::relu(*v));
            } else if self.final_tanh {
                h.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
        h
    }
}

/// Gaussian posterior parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl Posterior {
    /// `z = μ + exp(½ log σ²) ⊙ ε` with `ε` drawn from `rng`.
    pub fn reparameterize<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let eps: Vec<f64> = (0..self.mu.len()).map(|_| rng.sample(StandardNormal)).collect();
        self.reparameterize_with(&eps)
    }

    pub fn reparameterize_with(&self, eps: &[f64]) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.logvar)
            .zip(eps)
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect()
    }
}

/// One decoder output row: raw coordinates and the level-up probability.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub coords: Vec<f64>,
    pub flag_logit: f64,
    pub flag_prob: f64,
}

/// Loss graph nodes for one sequence.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub l2: Var,
    pub bce: Var,
    pub recon: Var,
    pub kl: Var,
    pub total: Var,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub l2: f64,
    pub bce: f64,
    pub recon: f64,
    pub kl: f64,
    pub total: f64,
    /// Branch signature of the evaluated graph.
    pub signature: u64,
}

/// The network layout. Holds no weights; those live in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct LoopDraw {
    pub config: ModelConfig,
    pub enc_in: Linear,
    pub encoder: Transformer,
    pub mu_head: Mlp,
    pub logvar_head: Mlp,
    pub start_head: Mlp,
    pub dec_in: Linear,
    pub decoder: Transformer,
    pub out_head: Linear,
    pe: Tensor,
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

impl LoopDraw {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = config;
        let td = c.token_dim();
        Ok(Self {
            enc_in: Linear::new("enc.in", td, c.d_model, true),
            encoder: Transformer::new("enc", c.n_layers, c.d_model, c.n_heads, c.ffn_dim),
            mu_head: Mlp::new("enc.mu", &sizes(c.d_model, &c.z_head_hidden, c.latent_dim), false),
            logvar_head: Mlp::new(
                "enc.logvar",
                &sizes(c.d_model, &c.z_head_hidden, c.latent_dim),
                false,
            ),
            start_head: Mlp::new("dec.start", &sizes(c.latent_dim, &c.d_head_hidden, c.d_model), true),
            dec_in: Linear::new("dec.in", td, c.d_model, true),
            decoder: Transformer::new("dec", c.n_layers, c.d_model, c.n_heads, c.ffn_dim),
            out_head: Linear::new("dec.out", c.d_model, td, true),
            pe: positional_encoding(c.max_seq_len + 1, c.d_model),
            config: c.clone(),
        })
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        // The aggregate slot starts at zero.
        store.insert(SPECIAL, Tensor::zeros(1, self.config.d_model))?;
        self.enc_in.init(&mut store, &mut rng)?;
        self.encoder.init(&mut store, &mut rng)?;
        self.mu_head.init(&mut store, &mut rng)?;
        self.logvar_head.init(&mut store, &mut rng)?;
        self.start_head.init(&mut store, &mut rng)?;
        self.dec_in.init(&mut store, &mut rng)?;
        self.decoder.init(&mut store, &mut rng)?;
        self.out_head.init(&mut store, &mut rng)?;
        Ok(store)
    }

    pub fn positional_row(&self, t: usize) -> &[f64] {
        self.pe.row(t)
    }

    fn pe_rows(&self, n: usize) -> Tensor {
        Tensor::new(n, self.config.d_model, self.pe.data()[..n * self.config.d_model].to_vec())
    }

    pub fn check_tokens(&self, tokens: &[LoopToken]) -> Result<()> {
        if tokens.len() > self.config.max_seq_len {
            return Err(ModelError::Length {
                len: tokens.len(),
                max: self.config.max_seq_len,
            });
        }
        let want = 2 * self.config.n_points;
        if let Some(t) = tokens.iter().find(|t| t.coords.len() != want) {
            return Err(ModelError::Data(format!(
                "token has {} coordinates, model expects {want}",
                t.coords.len()
            )));
        }
        Ok(())
    }

    pub fn tokens_tensor(&self, tokens: &[LoopToken]) -> Tensor {
        Tensor::from_rows(&tokens.iter().map(LoopToken::pack).collect::<Vec<_>>())
    }

    /// Posterior parameter nodes for `tokens`.
    pub fn encode_graph(&self, g: &mut Graph, store: &ParamStore, tokens: &[LoopToken]) -> (Var, Var) {
        let special = g.param(store, SPECIAL);
        let rows = if tokens.is_empty() {
            special
        } else {
            let x = g.input(self.tokens_tensor(tokens));
            let h = self.enc_in.forward(g, store, x);
            g.concat_rows(&[special, h])
        };
        let pe = g.input(self.pe_rows(tokens.len() + 1));
        let rows = g.add(rows, pe);
        let out = self.encoder.forward(g, store, rows, false);
        let e = g.slice_rows(out, 0, 1);
        let mu = self.mu_head.forward(g, store, e);
        let lv = self.logvar_head.forward(g, store, e);
        let lv = g.clamp(lv, LOGVAR_MIN, LOGVAR_MAX);
        (mu, lv)
    }

    /// Start embedding node for a `[1, N_z]` latent node.
    pub fn start_graph(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Var {
        self.start_head.forward(g, store, z)
    }

    /// Teacher-forced decoder outputs `[inputs.len() + 1, 2N + 1]`. Row `t`
    /// sees the start embedding and `inputs[..t]` only.
    pub fn decode_graph(&self, g: &mut Graph, store: &ParamStore, z: Var, inputs: &[LoopToken]) -> Var {
        let d = self.start_graph(g, store, z);
        let rows = if inputs.is_empty() {
            d
        } else {
            let x = g.input(self.tokens_tensor(inputs));
            let h = self.dec_in.forward(g, store, x);
            g.concat_rows(&[d, h])
        };
        let pe = g.input(self.pe_rows(inputs.len() + 1));
        let rows = g.add(rows, pe);
        let out = self.decoder.forward(g, store, rows, true);
        self.out_head.forward(g, store, out)
    }

    /// Training targets: the tokens followed by the end-of-sequence token.
    pub fn targets(&self, tokens: &[LoopToken]) -> Vec<LoopToken> {
        let mut t = tokens.to_vec();
        t.push(LoopToken::eos(self.config.n_points));
        t
    }

    /// Full objective for one sequence with fixed reparameterization noise.
    pub fn loss_graph(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        tokens: &[LoopToken],
        eps: &[f64],
        beta_eff: f64,
    ) -> LossVars {
        let c = &self.config;
        let (mu, lv) = self.encode_graph(g, store, tokens);
        let half = g.scale(lv, 0.5);
        let std = g.exp(half);
        let e = g.input(Tensor::row_vector(eps));
        let noise = g.mul(std, e);
        let z = g.add(mu, noise);
        let targets = self.targets(tokens);
        let out = self.decode_graph(g, store, z, tokens);
        let n2 = 2 * c.n_points;
        let coords = g.slice_cols(out, 0, n2);
        let logits = g.slice_cols(out, n2, 1);
        let target_coords = Tensor::from_rows(&targets.iter().map(|t| t.coords.clone()).collect::<Vec<_>>());
        let target_flags = Tensor::new(
            targets.len(),
            1,
            targets.iter().map(|t| if t.level_up { 1.0 } else { 0.0 }).collect(),
        );
        let l2 = g.squared_error(coords, target_coords);
        let bce = g.bce_with_logits(logits, target_flags);
        let recon = g.add(l2, bce);
        let kl = g.kl_std_normal(mu, lv);
        let kl = g.max_const(kl, c.min_kl);
        let kl = g.scale(kl, beta_eff / c.latent_dim as f64);
        let total = g.add(recon, kl);
        LossVars {
            l2,
            bce,
            recon,
            kl,
            total,
        }
    }

    /// Output head on one decoder row.
    pub fn predict_row(&self, store: &ParamStore, hidden: &[f64]) -> Prediction {
        let mut out = self.out_head.apply_row(store, hidden);
        let flag_logit = out.pop().expect("non-empty output");
        Prediction {
            coords: out,
            flag_logit,
            flag_prob: kernels::sigmoid(flag_logit),
        }
    }

    /// Decoder input row for position `t`: the start embedding at 0, projected
    /// tokens afterwards, plus the positional encoding.
    pub fn decoder_input_row(&self, store: &ParamStore, t: usize, z: &[f64], prev: Option<&LoopToken>) -> Vec<f64> {
        let mut row = match prev {
            None => self.start_head.apply_row(store, z),
            Some(tok) => self.dec_in.apply_row(store, &tok.pack()),
        };
        for (v, p) in row.iter_mut().zip(self.positional_row(t)) {
            *v += p;
        }
        row
    }
}

/// A network layout bound to its weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub arch: LoopDraw,
    pub params: ParamStore,
    /// Optimizer steps taken so far.
    pub step: u64,
}

impl Model {
    /// Freshly initialized model seeded from `config.seed`.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        let arch = LoopDraw::new(config)?;
        let params = arch.init_params(config.seed)?;
        Ok(Self {
            arch,
            params,
            step: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    pub fn check_sequence(&self, seq: &LoopSequence) -> Result<()> {
        if seq.n_points != self.config().n_points {
            return Err(ModelError::Data(format!(
                "sequence has N = {}, model expects {}",
                seq.n_points,
                self.config().n_points
            )));
        }
        self.arch.check_tokens(&seq.tokens)
    }

    pub fn encode(&self, tokens: &[LoopToken]) -> Result<Posterior> {
        self.arch.check_tokens(tokens)?;
        let mut g = Graph::new();
        let (mu, lv) = self.arch.encode_graph(&mut g, &self.params, tokens);
        Ok(Posterior {
            mu: g.value(mu).data().to_vec(),
            logvar: g.value(lv).data().to_vec(),
        })
    }

    pub fn decoder_start(&self, z: &[f64]) -> Vec<f64> {
        self.arch.start_head.apply_row(&self.params, z)
    }

    fn check_latent(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.config().latent_dim {
            return Err(ModelError::Data(format!(
                "latent code has length {}, model expects {}",
                z.len(),
                self.config().latent_dim
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Data("latent code is not finite".into()));
        }
        Ok(())
    }

    /// Predictions for every position given ground-truth `inputs`; returns
    /// `inputs.len() + 1` rows.
    pub fn decode_teacher_forced(&self, z: &[f64], inputs: &[LoopToken]) -> Result<Vec<Prediction>> {
        self.check_latent(z)?;
        self.arch.check_tokens(inputs)?;
        let mut g = Graph::new();
        let zv = g.input(Tensor::row_vector(z));
        let out = self.arch.decode_graph(&mut g, &self.params, zv, inputs);
        let out = g.value(out);
        Ok((0..out.rows())
            .map(|r| {
                let row = out.row(r);
                let (coords, logit) = row.split_at(row.len() - 1);
                Prediction {
                    coords: coords.to_vec(),
                    flag_logit: logit[0],
                    flag_prob: kernels::sigmoid(logit[0]),
                }
            })
            .collect())
    }

    /// Loss on one sequence with explicit noise.
    pub fn loss(&self, tokens: &[LoopToken], eps: &[f64], beta_eff: f64) -> Result<LossValues> {
        Ok(loss_and_grads(&self.arch, &self.params, tokens, eps, beta_eff, false)?.0)
    }

    pub fn loss_and_grads(
        &self,
        tokens: &[LoopToken],
        eps: &[f64],
        beta_eff: f64,
    ) -> Result<(LossValues, Gradients)> {
        loss_and_grads(&self.arch, &self.params, tokens, eps, beta_eff, true)
    }
}

pub(crate) fn loss_and_grads(
    arch: &LoopDraw,
    params: &ParamStore,
    tokens: &[LoopToken],
    eps: &[f64],
    beta_eff: f64,
    with_grads: bool,
) -> Result<(LossValues, Gradients)> {
    arch.check_tokens(tokens)?;
    if eps.len() != arch.config.latent_dim {
        return Err(ModelError::Data(format!(
            "noise has length {}, expected {}",
            eps.len(),
            arch.config.latent_dim
        )));
    }
    let mut g = Graph::new();
    let v = arch.loss_graph(&mut g, params, tokens, eps, beta_eff);
    let values = LossValues {
        l2: g.value(v.l2).item(),
        bce: g.value(v.bce).item(),
        recon: g.value(v.recon).item(),
        kl: g.value(v.kl).item(),
        total: g.value(v.total).item(),
        signature: g.branch_signature(),
    };
    let grads = if with_grads {
        g.backward(v.total)
    } else {
        Gradients::default()
    };
    Ok((values, grads))
}
