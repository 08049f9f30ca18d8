use crate::{ModelError, Result};
use loopforge_core::{Axis, PlaneSchedule};
use serde::{Deserialize, Serialize};

/// Exponential KL weight warm-up: `β(1 − (1 − η₀)·Rˢᵗᵉᵖ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealConfig {
    pub eta0: f64,
    pub rate: f64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            eta0: 0.01,
            rate: 0.9999,
        }
    }
}

/// Constant learning rate for `warm_epochs`, then a linear ramp that reaches
/// zero on the last epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warm_epochs: usize,
    pub rampdown_epochs: usize,
}

impl LrSchedule {
    pub fn epochs(&self) -> usize {
        self.warm_epochs + self.rampdown_epochs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Points per loop.
    #[serde(rename = "N")]
    pub n_points: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    #[serde(rename = "N_z")]
    pub latent_dim: usize,
    pub max_seq_len: usize,
    /// Hidden widths of the posterior heads.
    pub z_head_hidden: Vec<usize>,
    /// Hidden widths of the start-embedding head.
    pub d_head_hidden: Vec<usize>,
    pub beta_kl: f64,
    /// Floor on the summed KL divergence.
    pub min_kl: f64,
    pub anneal: AnnealConfig,
    pub lr: LrSchedule,
    pub batch_size: usize,
    pub seed: u64,
    pub planes: PlaneSchedule,
}

impl ModelConfig {
    /// Small model that trains in minutes on one core.
    pub fn desk(planes: PlaneSchedule) -> Self {
        Self {
            n_points: 32,
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            ffn_dim: 128,
            latent_dim: 16,
            max_seq_len: 135,
            z_head_hidden: vec![64],
            d_head_hidden: vec![64],
            beta_kl: 1.0,
            min_kl: 3.2,
            anneal: AnnealConfig::default(),
            lr: LrSchedule {
                base_lr: 1e-3,
                warm_epochs: 200,
                rampdown_epochs: 100,
            },
            batch_size: 8,
            seed: 0,
            planes,
        }
    }

    /// Full-size vase model: 4 single-head layers, 512 wide, `N_z = 64`.
    pub fn full_vase() -> Self {
        Self {
            d_model: 512,
            n_layers: 4,
            n_heads: 1,
            ffn_dim: 2048,
            latent_dim: 64,
            z_head_hidden: vec![512],
            d_head_hidden: vec![512],
            min_kl: 12.8,
            lr: LrSchedule {
                base_lr: 7e-5,
                warm_epochs: 70,
                rampdown_epochs: 7230,
            },
            batch_size: 32,
            ..Self::desk(PlaneSchedule::centered(Axis::Y, 40))
        }
    }

    /// Full-size sofa model: 8 layers with 8 heads each.
    pub fn full_sofa() -> Self {
        Self {
            n_layers: 8,
            n_heads: 8,
            max_seq_len: 121,
            planes: PlaneSchedule::centered(Axis::X, 32),
            ..Self::full_vase()
        }
    }

    /// Tiny configuration used for gradient checks.
    pub fn tiny() -> Self {
        Self {
            d_model: 32,
            n_layers: 2,
            n_heads: 2,
            ffn_dim: 64,
            latent_dim: 8,
            max_seq_len: 16,
            z_head_hidden: vec![16],
            d_head_hidden: vec![16],
            min_kl: 0.0,
            ..Self::desk(PlaneSchedule::centered(Axis::Y, 4))
        }
    }

    pub fn token_dim(&self) -> usize {
        2 * self.n_points + 1
    }

    pub fn epochs(&self) -> usize {
        self.lr.epochs()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.n_points < 3 {
            return fail(format!("N must be at least 3, got {}", self.n_points));
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.latent_dim == 0 {
            return fail("N_z must be at least 1".into());
        }
        if self.n_layers == 0 || self.ffn_dim == 0 {
            return fail("n_layers and ffn_dim must be positive".into());
        }
        if self.max_seq_len == 0 {
            return fail("max_seq_len must be positive".into());
        }
        if self.planes.count == 0 {
            return fail("plane count must be positive".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self
            .z_head_hidden
            .iter()
            .chain(&self.d_head_hidden)
            .any(|&h| h == 0)
        {
            return fail("MLP hidden sizes must be positive".into());
        }
        if !(self.beta_kl >= 0.0 && self.beta_kl.is_finite()) {
            return fail(format!("beta_kl must be finite and non-negative, got {}", self.beta_kl));
        }
        if !(self.min_kl >= 0.0 && self.min_kl.is_finite()) {
            return fail(format!("min_kl must be finite and non-negative, got {}", self.min_kl));
        }
        if !(0.0..=1.0).contains(&self.anneal.eta0) || !(0.0..=1.0).contains(&self.anneal.rate) {
            return fail("anneal eta0 and rate must lie in [0, 1]".into());
        }
        if !(self.lr.base_lr > 0.0 && self.lr.base_lr.is_finite()) {
            return fail(format!("base_lr must be positive, got {}", self.lr.base_lr));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for cfg in [
            ModelConfig::desk(PlaneSchedule::centered(Axis::Y, 16)),
            ModelConfig::full_vase(),
            ModelConfig::full_sofa(),
            ModelConfig::tiny(),
        ] {
            cfg.validate().unwrap();
            assert_eq!(cfg.token_dim(), 65);
        }
        let p = ModelConfig::full_vase();
        assert_eq!((p.latent_dim, p.planes.count, p.max_seq_len), (64, 40, 135));
        assert_eq!(ModelConfig::full_sofa().max_seq_len, 121);
    }

    #[test]
    fn json_round_trip_uses_short_names() {
        let cfg = ModelConfig::tiny();
        let text = cfg.to_json();
        assert!(text.contains("\"N_z\""));
        assert_eq!(ModelConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut cfg = ModelConfig::tiny();
        cfg.n_heads = 3;
        assert!(matches!(cfg.validate(), Err(ModelError::Config(_))));
    }
}
