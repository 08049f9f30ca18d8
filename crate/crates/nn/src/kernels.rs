//! Row-local numeric kernels shared by the autodiff graph and incremental
//! inference.
//!
//! Every kernel computes output row `i` from input row `i` alone (plus shared
//! weights) with a fixed summation order, so evaluating one row at a time
//! gives bit-identical results to evaluating a whole matrix.

/// `out[n×m] = a[n×k] · b[k×m]`, accumulating over `k` in ascending order.
pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(out.len(), n * m);
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        row.fill(0.0);
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let b_row = &b[p * m..(p + 1) * m];
            for (o, &b_pj) in row.iter_mut().zip(b_row) {
                *o += a_ip * b_pj;
            }
        }
    }
}

/// `out[n×k] += g[n×m] · b[k×m]ᵀ`.
pub fn matmul_nt_acc(g: &[f64], b: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    for i in 0..n {
        let g_row = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let b_row = &b[p * m..(p + 1) * m];
            out[i * k + p] += dot(g_row, b_row);
        }
    }
}

/// `out[k×m] += a[n×k]ᵀ · g[n×m]`.
pub fn matmul_tn_acc(a: &[f64], g: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    for i in 0..n {
        let g_row = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            let o = &mut out[p * m..(p + 1) * m];
            for (o, &g_ij) in o.iter_mut().zip(g_row) {
                *o += a_ip * g_ij;
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |s, (x, y)| s + x * y)
}

pub fn add_bias(row: &mut [f64], bias: &[f64]) {
    for (r, b) in row.iter_mut().zip(bias) {
        *r += b;
    }
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Normalizes one row; writes the normalized-but-unscaled values to `xhat`
/// and returns the reciprocal standard deviation.
pub fn layer_norm_row(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    out: &mut [f64],
    xhat: &mut [f64],
) -> f64 {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    for j in 0..x.len() {
        xhat[j] = (x[j] - mean) * rstd;
        out[j] = xhat[j] * gamma[j] + beta[j];
    }
    rstd
}

/// Multi-head attention for one query row against `n` key/value rows.
///
/// `q` has width `d`; `keys` and `values` are `n×d` row-major; heads split the
/// width evenly. `probs` receives the `heads×n` softmax weights.
pub fn attention_row(
    q: &[f64],
    keys: &[f64],
    values: &[f64],
    n: usize,
    heads: usize,
    probs: &mut [f64],
    out: &mut [f64],
) {
    let d = q.len();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    out.fill(0.0);
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let p = &mut probs[h * n..(h + 1) * n];
        let mut max = f64::NEG_INFINITY;
        for j in 0..n {
            let s = dot(&q[cols.clone()], &keys[j * d + cols.start..j * d + cols.end]) * scale;
            p[j] = s;
            max = max.max(s);
        }
        let mut total = 0.0;
        for pj in p.iter_mut() {
            *pj = (*pj - max).exp();
            total += *pj;
        }
        for pj in p.iter_mut() {
            *pj /= total;
        }
        let o = &mut out[cols.clone()];
        for j in 0..n {
            let v = &values[j * d + cols.start..j * d + cols.end];
            for (o, &vj) in o.iter_mut().zip(v) {
                *o += p[j] * vj;
            }
        }
    }
}

/// Sinusoidal position table row: `sin(t / 10000^(2k/d))` at even columns,
/// `cos` of the same angle at odd columns.
pub fn positional_row(t: usize, d: usize, out: &mut [f64]) {
    for (c, o) in out.iter_mut().enumerate().take(d) {
        let k = c / 2;
        let angle = t as f64 / 10000f64.powf(2.0 * k as f64 / d as f64);
        *o = if c % 2 == 0 { angle.sin() } else { angle.cos() };
    }
}
