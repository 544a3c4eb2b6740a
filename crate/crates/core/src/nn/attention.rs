//! Self-attention with 2D rotary positional embeddings.
//!
//! Each head's feature vector is split in two halves. The first half is rotated
//! pairwise by angles proportional to the row index, the second half by the
//! column index, with per-pair frequencies `base^(-2j/half)`. Dot products of
//! rotated queries and keys then depend only on relative offsets.

use super::tensor::gemm;
use super::NetError;

/// Default rotary base. Grids here are tens of cells across, so a small base
/// keeps the slowest pair rotating noticeably.
pub const DEFAULT_ROPE_BASE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rope2d {
    pub base: f64,
}

impl Default for Rope2d {
    fn default() -> Self {
        Self { base: DEFAULT_ROPE_BASE }
    }
}

impl Rope2d {
    fn frequencies(&self, head_dim: usize) -> Vec<f64> {
        let half = head_dim / 2;
        (0..half / 2).map(|j| self.base.powf(-2.0 * j as f64 / half as f64)).collect()
    }

    /// Rotates one head vector in place; `inverse` rotates by the negated angles.
    fn rotate(&self, x: &mut [f64], freqs: &[f64], pos: (f64, f64), inverse: bool) {
        let half = x.len() / 2;
        let sign = if inverse { -1.0 } else { 1.0 };
        for (offset, p) in [(0, pos.0), (half, pos.1)] {
            for (j, f) in freqs.iter().enumerate() {
                let (s, c) = (sign * p * f).sin_cos();
                let i = offset + 2 * j;
                let (a, b) = (x[i], x[i + 1]);
                x[i] = a * c - b * s;
                x[i + 1] = a * s + b * c;
            }
        }
    }
}

/// Forward cache of one head, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct HeadCache {
    /// Rotated queries and keys, N×d.
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention weights, N×N (row = query).
    probs: Vec<f64>,
}

/// Single-head attention on token-major N×d arrays. Returns the N×d output.
pub(crate) fn head_forward(
    rope: &Rope2d,
    mut q: Vec<f64>,
    mut k: Vec<f64>,
    v: Vec<f64>,
    dim: usize,
    positions: &[(f64, f64)],
) -> (Vec<f64>, HeadCache) {
    let n = positions.len();
    let freqs = rope.frequencies(dim);
    for (i, &p) in positions.iter().enumerate() {
        rope.rotate(&mut q[i * dim..(i + 1) * dim], &freqs, p, false);
        rope.rotate(&mut k[i * dim..(i + 1) * dim], &freqs, p, false);
    }
    let mut probs = vec![0.0; n * n];
    gemm(n, dim, n, &q, false, &k, true, &mut probs, false);
    let scale = 1.0 / (dim as f64).sqrt();
    for row in probs.chunks_mut(n) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s * scale));
        let mut sum = 0.0;
        for s in row.iter_mut() {
            *s = (*s * scale - max).exp();
            sum += *s;
        }
        for s in row.iter_mut() {
            *s /= sum;
        }
    }
    let mut out = vec![0.0; n * dim];
    gemm(n, n, dim, &probs, false, &v, false, &mut out, false);
    (out, HeadCache { q, k, v, probs })
}

/// Gradients `(dq, dk, dv)` with respect to the unrotated inputs.
pub(crate) fn head_backward(
    rope: &Rope2d,
    cache: &HeadCache,
    grad_out: &[f64],
    dim: usize,
    positions: &[(f64, f64)],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = positions.len();
    let mut dv = vec![0.0; n * dim];
    gemm(n, n, dim, &cache.probs, true, grad_out, false, &mut dv, false);
    let mut ds = vec![0.0; n * n];
    gemm(n, dim, n, grad_out, false, &cache.v, true, &mut ds, false);
    let scale = 1.0 / (dim as f64).sqrt();
    for (drow, prow) in ds.chunks_mut(n).zip(cache.probs.chunks(n)) {
        let dot: f64 = drow.iter().zip(prow).map(|(d, p)| d * p).sum();
        for (d, p) in drow.iter_mut().zip(prow) {
            *d = p * (*d - dot) * scale;
        }
    }
    let mut dq = vec![0.0; n * dim];
    gemm(n, n, dim, &ds, false, &cache.k, false, &mut dq, false);
    let mut dk = vec![0.0; n * dim];
    gemm(n, n, dim, &ds, true, &cache.q, false, &mut dk, false);
    let freqs = rope.frequencies(dim);
    for (i, &p) in positions.iter().enumerate() {
        rope.rotate(&mut dq[i * dim..(i + 1) * dim], &freqs, p, true);
        rope.rotate(&mut dk[i * dim..(i + 1) * dim], &freqs, p, true);
    }
    (dq, dk, dv)
}

/// Output of [`rope2d_attention`].
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// N×D, token-major.
    pub values: Vec<f64>,
    /// Per head, N×N weights (row = query position).
    pub weights: Vec<Vec<f64>>,
}

/// Multi-head scaled dot-product attention with 2D rotary embeddings.
///
/// `q`, `k`, `v` are token-major N×`dim` arrays, one row per entry of
/// `positions` (given as `(row, column)`). `dim / heads` must be divisible by 4.
pub fn rope2d_attention(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    dim: usize,
    heads: usize,
    positions: &[(f64, f64)],
    rope: &Rope2d,
) -> Result<AttentionOutput, NetError> {
    if heads == 0 || dim % heads != 0 || (dim / heads) % 4 != 0 {
        return Err(NetError::Config(format!(
            "attention dim {dim} with {heads} heads: head dimension must be a positive multiple of 4"
        )));
    }
    let n = positions.len();
    for (name, a) in [("q", q), ("k", k), ("v", v)] {
        if a.len() != n * dim {
            return Err(NetError::Shape(format!("{name} has {} values, expected {n}x{dim}", a.len())));
        }
    }
    let d = dim / heads;
    let split = |a: &[f64], h: usize| -> Vec<f64> {
        (0..n).flat_map(|i| a[i * dim + h * d..i * dim + (h + 1) * d].iter().copied()).collect()
    };
    let mut values = vec![0.0; n * dim];
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (out, cache) = head_forward(rope, split(q, h), split(k, h), split(v, h), d, positions);
        for i in 0..n {
            values[i * dim + h * d..i * dim + (h + 1) * d].copy_from_slice(&out[i * d..(i + 1) * d]);
        }
        weights.push(cache.probs);
    }
    Ok(AttentionOutput { values, weights })
}
