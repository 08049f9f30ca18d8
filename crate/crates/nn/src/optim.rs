use crate::params::{Gradients, ParamStore};
use crate::tensor::Tensor;
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

/// One bias-corrected Adam update. Parameters without a gradient entry are
/// treated as having zero gradient.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    cfg: AdamConfig,
) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, p) in params.values_mut() {
        let [r, c] = p.shape();
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(r, c));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(r, c));
        let g = grads.get(name);
        for i in 0..p.len() {
            let gi = g.map_or(0.0, |g| g.data()[i]);
            let mi = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * gi;
            let vi = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let update = lr * (mi / c1) / ((vi / c2).sqrt() + cfg.eps);
            p.data_mut()[i] -= update;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::scalar(value)).unwrap();
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = single(1.5);
        let mut state = AdamState::default();
        for _ in 0..5 {
            adam_step(&mut p, &Gradients::default(), &mut state, 0.1, AdamConfig::default());
        }
        assert_eq!(p.scalar("w", 0), 1.5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [0.3, -2.0, 1e3] {
            let mut p = single(0.0);
            let mut grads = Gradients::default();
            grads.accumulate("w", Tensor::scalar(g));
            let mut state = AdamState::default();
            adam_step(&mut p, &grads, &mut state, 1e-3, AdamConfig::default());
            // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps)
            let expected = -1e-3 * g / (g.abs() + 1e-8);
            assert!((p.scalar("w", 0) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn trajectories_are_reproducible() {
        let run = || {
            let mut p = single(2.0);
            let mut state = AdamState::default();
            for _ in 0..100 {
                let mut grads = Gradients::default();
                grads.accumulate("w", Tensor::scalar(2.0 * p.scalar("w", 0)));
                adam_step(&mut p, &grads, &mut state, 0.05, AdamConfig::default());
            }
            p.scalar("w", 0)
        };
        let (a, b) = (run(), run());
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a.abs() < 2.0);
    }
}
