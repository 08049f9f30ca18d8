//! Scalar reference forms of the training objective and its schedules. The
//! graph version used for training lives in [`crate::model`]; the tests check
//! that both agree.

use crate::config::{AnnealConfig, LrSchedule};
use loopforge_core::LoopToken;
use loopforge_nn::graph::bce;

/// Summed KL divergence of `N(μ, σ²)` from the standard normal.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(m, lv)| -0.5 * (1.0 + lv - m * m - lv.exp()))
        .sum()
}

/// `(β_eff / N_z) · max(KL, m_KL)` with `N_z = mu.len()`.
pub fn loss_kl(mu: &[f64], logvar: &[f64], beta_eff: f64, min_kl: f64) -> f64 {
    beta_eff / mu.len() as f64 * kl_divergence(mu, logvar).max(min_kl)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ReconTerms {
    pub l2: f64,
    pub bce: f64,
}

impl ReconTerms {
    pub fn total(&self) -> f64 {
        self.l2 + self.bce
    }
}

/// Squared coordinate error plus flag cross-entropy, summed over time.
/// `flag_probs[t]` is the predicted probability that token `t` levels up.
pub fn loss_recon(pred_coords: &[Vec<f64>], flag_probs: &[f64], target: &[LoopToken]) -> ReconTerms {
    assert_eq!(pred_coords.len(), target.len());
    assert_eq!(flag_probs.len(), target.len());
    let mut terms = ReconTerms::default();
    for ((pred, &p), tok) in pred_coords.iter().zip(flag_probs).zip(target) {
        terms.l2 += pred
            .iter()
            .zip(&tok.coords)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        terms.bce += bce(p, if tok.level_up { 1.0 } else { 0.0 });
    }
    terms
}

/// Effective KL weight after `step` optimizer steps.
pub fn kl_anneal(step: u64, beta_kl: f64, anneal: AnnealConfig) -> f64 {
    let decay = anneal.rate.powf(step as f64);
    beta_kl * (1.0 - (1.0 - anneal.eta0) * decay)
}

/// Learning rate for the 0-based `epoch`.
pub fn lr_at(epoch: usize, sched: LrSchedule) -> f64 {
    if epoch < sched.warm_epochs {
        return sched.base_lr;
    }
    let r = epoch - sched.warm_epochs;
    let last = sched.rampdown_epochs.saturating_sub(1);
    if r >= last {
        return 0.0;
    }
    sched.base_lr * (1.0 - r as f64 / last as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_kl_value() {
        let mu = vec![1.0; 64];
        let lv = vec![0.0; 64];
        assert_eq!(kl_divergence(&mu, &lv), 32.0);
        assert_eq!(loss_kl(&mu, &lv, 1.0, 0.0), 0.5);
        assert_eq!(loss_kl(&[0.0; 8], &[0.0; 8], 1.0, 0.0), 0.0);
    }

    #[test]
    fn kl_floor() {
        let v = loss_kl(&[0.1; 16], &[0.0; 16], 0.7, 3.2);
        assert_eq!(v, 0.7 * 3.2 / 16.0);
    }

    #[test]
    fn recon_hand_values() {
        let target: Vec<LoopToken> = (0..5)
            .map(|t| LoopToken {
                coords: vec![0.25 * t as f64; 64],
                level_up: t % 2 == 0,
            })
            .collect();
        let delta = 0.125;
        let pred: Vec<Vec<f64>> = target
            .iter()
            .map(|t| t.coords.iter().map(|c| c + delta).collect())
            .collect();
        let r = loss_recon(&pred, &[0.5; 5], &target);
        assert_eq!(r.l2, 5.0 * 64.0 * delta * delta);
        assert!((r.bce - 5.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn anneal_endpoints_and_monotone() {
        let a = AnnealConfig::default();
        assert!((kl_anneal(0, 2.0, a) - 0.02).abs() < 1e-15);
        assert!((kl_anneal(10_000_000, 2.0, a) - 2.0).abs() < 1e-12);
        let mut prev = 0.0;
        for s in (0..1_000_000).step_by(997) {
            let b = kl_anneal(s, 1.0, a);
            assert!(b >= prev);
            prev = b;
        }
    }

    #[test]
    fn lr_schedule_shape() {
        let s = LrSchedule {
            base_lr: 7e-5,
            warm_epochs: 70,
            rampdown_epochs: 7230,
        };
        assert_eq!(lr_at(0, s), 7e-5);
        assert_eq!(lr_at(69, s), 7e-5);
        assert_eq!(lr_at(70, s), 7e-5);
        assert_eq!(lr_at(s.epochs() - 1, s), 0.0);
        let odd = LrSchedule {
            base_lr: 1.0,
            warm_epochs: 3,
            rampdown_epochs: 101,
        };
        assert_eq!(lr_at(3 + 50, odd), 0.5);
        for e in 1..odd.epochs() {
            assert!(lr_at(e, odd) <= lr_at(e - 1, odd));
        }
    }
}
