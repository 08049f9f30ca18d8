//! Finite-difference verification of the full training loss.

use crate::{Model, ModelConfig, Result};
use loopforge_core::LoopToken;
use loopforge_nn::gradcheck::{gradcheck_piecewise, GradcheckOptions, GradcheckReport, Stencil};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Random tokens in the unit square; the first opens a plane.
pub fn random_tokens(seed: u64, n_points: usize, len: usize) -> Vec<LoopToken> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|i| LoopToken {
            coords: (0..2 * n_points).map(|_| rng.random_range(0.0..1.0)).collect(),
            level_up: i == 0 || rng.random_bool(0.4),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossCheck {
    /// Sequence length T of the random input.
    pub length: usize,
    pub probes: usize,
    pub h: f64,
    pub seed: u64,
    pub beta: f64,
}

impl Default for LossCheck {
    fn default() -> Self {
        Self {
            length: 6,
            probes: 200,
            h: 1e-4,
            seed: 5,
            beta: 0.8,
        }
    }
}

/// Compares analytic gradients of the total loss (reconstruction plus KL) of
/// a freshly initialized model against a five-point stencil on random probes.
pub fn gradcheck_loss(cfg: &ModelConfig, check: &LossCheck) -> Result<GradcheckReport> {
    let model = Model::new(cfg)?;
    let tokens = random_tokens(check.seed.wrapping_add(7), cfg.n_points, check.length);
    let mut rng = ChaCha8Rng::seed_from_u64(check.seed);
    let eps: Vec<f64> = (0..cfg.latent_dim)
        .map(|_| rng.sample(rand_distr::StandardNormal))
        .collect();
    let (_, grads) = model.loss_and_grads(&tokens, &eps, check.beta)?;
    let mut probe = model.clone();
    let mut failure = None;
    let report = gradcheck_piecewise(
        &model.params,
        &grads,
        |p| {
            probe.params.clone_from(p);
            match probe.loss(&tokens, &eps, check.beta) {
                Ok(v) => (v.total, v.signature),
                Err(e) => {
                    failure.get_or_insert(e);
                    (f64::NAN, 0)
                }
            }
        },
        GradcheckOptions {
            probes: check.probes,
            h: check.h,
            seed: check.seed,
            stencil: Stencil::FivePoint,
        },
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}
