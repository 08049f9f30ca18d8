//! Finite-difference verification of analytic gradients.

use crate::params::{Gradients, ParamStore};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Finite-difference formula.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(θ+h) − f(θ−h)) / 2h`, error O(h²).
    #[default]
    Central,
    /// `(f(θ−2h) − 8f(θ−h) + 8f(θ+h) − f(θ+2h)) / 12h`, error O(h⁴). Allows a
    /// larger step, which keeps rounding noise down on large losses.
    FivePoint,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckOptions {
    pub probes: usize,
    pub h: f64,
    pub seed: u64,
    pub stencil: Stencil,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            probes: 200,
            h: 1e-5,
            seed: 0,
            stencil: Stencil::Central,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub probes: Vec<Probe>,
    /// Draws discarded because the stencil crossed a branch point.
    pub skipped: usize,
}

impl GradcheckReport {
    pub fn worst(&self) -> Option<&Probe> {
        self.probes
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Relative error with denominator `max(|a|, |b|, 1e-12)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Compares `analytic` against a finite-difference estimate on randomly
/// chosen scalar parameters, drawn uniformly over all scalars.
pub fn gradcheck(
    params: &ParamStore,
    analytic: &Gradients,
    mut loss: impl FnMut(&ParamStore) -> f64,
    opts: GradcheckOptions,
) -> GradcheckReport {
    gradcheck_piecewise(params, analytic, |p| (loss(p), 0), opts)
}

/// Like [`gradcheck`] for piecewise-smooth losses. `loss` also returns a
/// branch signature (see [`crate::Graph::branch_signature`]); a draw whose
/// stencil points disagree on it straddles a kink, where finite differences
/// are meaningless, and is replaced by a fresh draw.
pub fn gradcheck_piecewise(
    params: &ParamStore,
    analytic: &Gradients,
    mut loss: impl FnMut(&ParamStore) -> (f64, u64),
    opts: GradcheckOptions,
) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let sizes: Vec<(String, usize)> = params
        .iter()
        .map(|(n, t)| (n.to_string(), t.len()))
        .collect();
    let total: usize = sizes.iter().map(|(_, s)| s).sum();
    let mut work = params.clone();
    let mut probes = Vec::with_capacity(opts.probes);
    let mut skipped = 0;
    if total == 0 {
        return GradcheckReport {
            max_rel_error: 0.0,
            probes,
            skipped,
        };
    }
    let max_draws = opts.probes.saturating_mul(20).max(1);
    for _ in 0..max_draws {
        if probes.len() == opts.probes {
            break;
        }
        let mut flat = rng.random_range(0..total);
        let (name, index) = sizes
            .iter()
            .find_map(|(n, s)| {
                if flat < *s {
                    Some((n.clone(), flat))
                } else {
                    flat -= s;
                    None
                }
            })
            .expect("index within total");
        let original = work.scalar(&name, index);
        let offsets: &[f64] = match opts.stencil {
            Stencil::Central => &[-1.0, 0.0, 1.0],
            Stencil::FivePoint => &[-2.0, -1.0, 0.0, 1.0, 2.0],
        };
        let mut values = Vec::with_capacity(offsets.len());
        let mut signatures = Vec::with_capacity(offsets.len());
        for &o in offsets {
            work.set_scalar(&name, index, original + o * opts.h);
            let (v, sig) = loss(&work);
            values.push(v);
            signatures.push(sig);
        }
        work.set_scalar(&name, index, original);
        if signatures.iter().any(|&s| s != signatures[0]) {
            skipped += 1;
            continue;
        }
        let h = opts.h;
        let numeric = match opts.stencil {
            Stencil::Central => (values[2] - values[0]) / (2.0 * h),
            Stencil::FivePoint => {
                ((values[0] - values[4]) + 8.0 * (values[3] - values[1])) / (12.0 * h)
            }
        };
        let a = analytic.scalar(&name, index);
        probes.push(Probe {
            rel_error: relative_error(a, numeric),
            name,
            index,
            analytic: a,
            numeric,
        });
    }
    GradcheckReport {
        max_rel_error: probes.iter().map(|p| p.rel_error).fold(0.0, f64::max),
        probes,
        skipped,
    }
}
