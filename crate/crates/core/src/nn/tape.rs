//! Reverse-mode differentiation over the handful of layer operations the U-Net
//! needs. Parameters are leaves borrowed from the caller; every other node owns
//! its value plus whatever the backward pass needs.

use super::attention::{head_backward, head_forward, HeadCache, Rope2d};
use super::tensor::{gemm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Param(usize),
    Conv {
        x: Var,
        w: Var,
        b: Var,
        kernel: usize,
        stride: usize,
        pad: usize,
        /// im2col matrix; `None` for 1×1 stride-1 convolutions.
        cols: Option<Vec<f64>>,
    },
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        mean: Vec<f64>,
        rstd: Vec<f64>,
    },
    Silu(Var),
    Add(Var, Var),
    /// `[C,H,W] + [C]` broadcast over positions.
    AddChannel(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Upsample2x(Var),
    Attention {
        qkv: Var,
        heads: usize,
        rope: Rope2d,
        caches: Vec<HeadCache>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

const NORM_EPS: f64 = 1e-5;

pub struct Tape<'p> {
    params: &'p [Tensor],
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn out_size(size: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - kernel) / stride + 1
}

fn im2col(x: &[f64], (c, h, w): (usize, usize, usize), k: usize, stride: usize, pad: usize) -> Vec<f64> {
    let (oh, ow) = (out_size(h, k, stride, pad), out_size(w, k, stride, pad));
    let n = oh * ow;
    let mut cols = vec![0.0; c * k * k * n];
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * n..][..n];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &x[ci * h * w + iy as usize * w..][..w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            row[oy * ow + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], (c, h, w): (usize, usize, usize), k: usize, stride: usize, pad: usize, dx: &mut [f64]) {
    let (oh, ow) = (out_size(h, k, stride, pad), out_size(w, k, stride, pad));
    let n = oh * ow;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * n..][..n];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut dx[ci * h * w + iy as usize * w..][..w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `(qkv channel index, token index)` layout helpers for attention heads.
fn gather_head(qkv: &[f64], n: usize, first_channel: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * d];
    for i in 0..d {
        let src = &qkv[(first_channel + i) * n..][..n];
        for (t, &v) in src.iter().enumerate() {
            out[t * d + i] = v;
        }
    }
    out
}

fn scatter_head(dst: &mut [f64], src: &[f64], n: usize, first_channel: usize, d: usize) {
    for i in 0..d {
        let row = &mut dst[(first_channel + i) * n..][..n];
        for (t, v) in row.iter_mut().enumerate() {
            *v += src[t * d + i];
        }
    }
}

fn positions(h: usize, w: usize) -> Vec<(f64, f64)> {
    (0..h * w).map(|i| ((i / w) as f64, (i % w) as f64)).collect()
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Tensor]) -> Self {
        Self { params, nodes: Vec::new() }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match self.nodes[v.0].op {
            Op::Param(i) => &self.params[i],
            _ => &self.nodes[v.0].value,
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, index: usize) -> Var {
        self.push(Tensor::zeros(&[0]), Op::Param(index))
    }

    /// 2D convolution of `[Ci,H,W]` with `[Co,Ci,k,k]` weights and `[Co]` bias.
    pub fn conv(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let (ci, h, wd) = self.value(x).chw();
        let wt = self.value(w);
        let (co, k) = (wt.shape[0], wt.shape[2]);
        assert_eq!(wt.shape[1], ci, "conv input channels");
        let (oh, ow) = (out_size(h, k, stride, pad), out_size(wd, k, stride, pad));
        let n = oh * ow;
        let cols = (k != 1 || stride != 1 || pad != 0).then(|| im2col(&self.value(x).data, (ci, h, wd), k, stride, pad));
        let mut out = vec![0.0; co * n];
        {
            let src = cols.as_deref().unwrap_or(&self.value(x).data);
            gemm(co, ci * k * k, n, &self.value(w).data, false, src, false, &mut out, false);
        }
        let bias = &self.value(b).data;
        for (o, row) in out.chunks_mut(n).enumerate() {
            row.iter_mut().for_each(|v| *v += bias[o]);
        }
        self.push(Tensor::from_vec(&[co, oh, ow], out), Op::Conv { x, w, b, kernel: k, stride, pad, cols })
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Var {
        let xv = self.value(x);
        let (c, h, w) = xv.chw();
        let per = c / groups * h * w;
        let hw = h * w;
        let mut mean = vec![0.0; groups];
        let mut rstd = vec![0.0; groups];
        let mut out = vec![0.0; xv.len()];
        let (g_data, b_data) = (&self.value(gamma).data, &self.value(beta).data);
        for g in 0..groups {
            let chunk = &xv.data[g * per..(g + 1) * per];
            let m = chunk.iter().sum::<f64>() / per as f64;
            let var = chunk.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / per as f64;
            let r = 1.0 / (var + NORM_EPS).sqrt();
            mean[g] = m;
            rstd[g] = r;
            for (i, v) in chunk.iter().enumerate() {
                let ch = (g * per + i) / hw;
                out[g * per + i] = (v - m) * r * g_data[ch] + b_data[ch];
            }
        }
        self.push(Tensor::from_vec(&[c, h, w], out), Op::GroupNorm { x, gamma, beta, groups, mean, rstd })
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data.iter().map(|&v| v * sigmoid(v)).collect();
        let shape = xv.shape.clone();
        self.push(Tensor::from_vec(&shape, data), Op::Silu(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape, bv.shape, "add shapes");
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x + y).collect();
        let shape = av.shape.clone();
        self.push(Tensor::from_vec(&shape, data), Op::Add(a, b))
    }

    pub fn add_channel(&mut self, x: Var, v: Var) -> Var {
        let xv = self.value(x);
        let (c, h, w) = xv.chw();
        let vv = &self.value(v).data;
        assert_eq!(vv.len(), c, "channel bias length");
        let mut data = xv.data.clone();
        for (ch, row) in data.chunks_mut(h * w).enumerate() {
            row.iter_mut().for_each(|e| *e += vv[ch]);
        }
        self.push(Tensor::from_vec(&[c, h, w], data), Op::AddChannel(x, v))
    }

    /// `w·x + b` for a vector `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (o, i) = (self.value(w).shape[0], self.value(w).shape[1]);
        assert_eq!(self.value(x).len(), i, "linear input size");
        let mut out = self.value(b).data.clone();
        gemm(o, i, 1, &self.value(w).data, false, &self.value(x).data, false, &mut out, true);
        self.push(Tensor::from_vec(&[o], out), Op::Linear { x, w, b })
    }

    /// Nearest-neighbor ×2 upsampling.
    pub fn upsample2x(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (c, h, w) = xv.chw();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    out[(ch * oh + y) * ow + xx] = xv.data[(ch * h + y / 2) * w + xx / 2];
                }
            }
        }
        self.push(Tensor::from_vec(&[c, oh, ow], out), Op::Upsample2x(x))
    }

    /// Rotary self-attention over positions of a `[3C,H,W]` query/key/value stack.
    pub fn attention(&mut self, qkv: Var, heads: usize, rope: Rope2d) -> Var {
        let (c3, h, w) = self.value(qkv).chw();
        let c = c3 / 3;
        let d = c / heads;
        let n = h * w;
        let pos = positions(h, w);
        let mut out = vec![0.0; c * n];
        let mut caches = Vec::with_capacity(heads);
        for hd in 0..heads {
            let data = &self.value(qkv).data;
            let q = gather_head(data, n, hd * d, d);
            let k = gather_head(data, n, c + hd * d, d);
            let v = gather_head(data, n, 2 * c + hd * d, d);
            let (o, cache) = head_forward(&rope, q, k, v, d, &pos);
            scatter_head(&mut out, &o, n, hd * d, d);
            caches.push(cache);
        }
        self.push(Tensor::from_vec(&[c, h, w], out), Op::Attention { qkv, heads, rope, caches })
    }

    /// Back-propagates `seed` from `output`, adding parameter gradients into `param_grads`.
    pub fn backward(&self, output: Var, seed: Tensor, param_grads: &mut [Tensor]) {
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        assert_eq!(seed.shape, self.value(output).shape, "seed shape");
        grads[output.0] = Some(seed.data);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Input => {}
                Op::Param(i) => param_grads[*i].add_assign(&g),
                Op::Conv { x, w, b, kernel, stride, pad, cols } => {
                    let xshape = self.value(*x).chw();
                    let wt = self.value(*w);
                    let co = wt.shape[0];
                    let kk = wt.shape[1] * kernel * kernel;
                    let n = g.len() / co;
                    let src = cols.as_deref().unwrap_or(&self.value(*x).data);
                    let mut dw = vec![0.0; co * kk];
                    gemm(co, n, kk, &g, false, src, true, &mut dw, false);
                    acc(&mut grads, *w, dw);
                    let db = g.chunks(n).map(|r| r.iter().sum()).collect();
                    acc(&mut grads, *b, db);
                    if matches!(self.nodes[x.0].op, Op::Input) {
                        continue;
                    }
                    let mut dcols = vec![0.0; kk * n];
                    gemm(kk, co, n, &wt.data, true, &g, false, &mut dcols, false);
                    if cols.is_some() {
                        let mut dx = vec![0.0; xshape.0 * xshape.1 * xshape.2];
                        col2im(&dcols, xshape, *kernel, *stride, *pad, &mut dx);
                        acc(&mut grads, *x, dx);
                    } else {
                        acc(&mut grads, *x, dcols);
                    }
                }
                Op::GroupNorm { x, gamma, beta, groups, mean, rstd } => {
                    let xv = self.value(*x);
                    let (c, h, w) = xv.chw();
                    let hw = h * w;
                    let per = c / groups * hw;
                    let gam = &self.value(*gamma).data;
                    let mut dx = vec![0.0; xv.len()];
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    for gi in 0..*groups {
                        let (m, r) = (mean[gi], rstd[gi]);
                        let base = gi * per;
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        for i in 0..per {
                            let ch = (base + i) / hw;
                            let xhat = (xv.data[base + i] - m) * r;
                            let gy = g[base + i];
                            dgamma[ch] += gy * xhat;
                            dbeta[ch] += gy;
                            let dxhat = gy * gam[ch];
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat;
                        }
                        let inv_n = 1.0 / per as f64;
                        for i in 0..per {
                            let ch = (base + i) / hw;
                            let xhat = (xv.data[base + i] - m) * r;
                            let dxhat = g[base + i] * gam[ch];
                            dx[base + i] = r * (dxhat - inv_n * sum_dxhat - xhat * inv_n * sum_dxhat_xhat);
                        }
                    }
                    acc(&mut grads, *gamma, dgamma);
                    acc(&mut grads, *beta, dbeta);
                    acc(&mut grads, *x, dx);
                }
                Op::Silu(x) => {
                    let dx = self
                        .value(*x)
                        .data
                        .iter()
                        .zip(&g)
                        .map(|(&v, gy)| {
                            let s = sigmoid(v);
                            gy * s * (1.0 + v * (1.0 - s))
                        })
                        .collect();
                    acc(&mut grads, *x, dx);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddChannel(x, v) => {
                    let c = self.value(*v).len();
                    let hw = g.len() / c;
                    let dv = g.chunks(hw).map(|r| r.iter().sum()).collect();
                    acc(&mut grads, *v, dv);
                    acc(&mut grads, *x, g);
                }
                Op::Linear { x, w, b } => {
                    let wt = self.value(*w);
                    let (o, i) = (wt.shape[0], wt.shape[1]);
                    let xv = &self.value(*x).data;
                    let mut dw = vec![0.0; o * i];
                    gemm(o, 1, i, &g, false, xv, false, &mut dw, false);
                    let mut dx = vec![0.0; i];
                    gemm(i, o, 1, &wt.data, true, &g, false, &mut dx, false);
                    acc(&mut grads, *w, dw);
                    acc(&mut grads, *b, g);
                    acc(&mut grads, *x, dx);
                }
                Op::Upsample2x(x) => {
                    let (c, h, w) = self.value(*x).chw();
                    let (oh, ow) = (2 * h, 2 * w);
                    let mut dx = vec![0.0; c * h * w];
                    for ch in 0..c {
                        for y in 0..oh {
                            for xx in 0..ow {
                                dx[(ch * h + y / 2) * w + xx / 2] += g[(ch * oh + y) * ow + xx];
                            }
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Attention { qkv, heads, rope, caches } => {
                    let (c3, h, w) = self.value(*qkv).chw();
                    let c = c3 / 3;
                    let d = c / heads;
                    let n = h * w;
                    let pos = positions(h, w);
                    let mut dqkv = vec![0.0; c3 * n];
                    for (hd, cache) in caches.iter().enumerate() {
                        let go = gather_head(&g, n, hd * d, d);
                        let (dq, dk, dv) = head_backward(rope, cache, &go, d, &pos);
                        scatter_head(&mut dqkv, &dq, n, hd * d, d);
                        scatter_head(&mut dqkv, &dk, n, c + hd * d, d);
                        scatter_head(&mut dqkv, &dv, n, 2 * c + hd * d, d);
                    }
                    acc(&mut grads, *qkv, dqkv);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Checks every parameter gradient of `build` (a scalar-seeded graph) against
    /// central differences.
    fn check(params: Vec<Tensor>, build: impl Fn(&mut Tape) -> Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (out_shape, seed) = {
            let mut tape = Tape::new(&params);
            let out = build(&mut tape);
            let shape = tape.value(out).shape.clone();
            (shape.clone(), rand_tensor(&shape, &mut rng))
        };
        let objective = |p: &[Tensor]| {
            let mut tape = Tape::new(p);
            let out = build(&mut tape);
            tape.value(out).data.iter().zip(&seed.data).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut grads: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(&p.shape)).collect();
        {
            let mut tape = Tape::new(&params);
            let out = build(&mut tape);
            assert_eq!(tape.value(out).shape, out_shape);
            tape.backward(out, seed.clone(), &mut grads);
        }
        let h = 1e-6;
        let mut p = params.clone();
        for (pi, grad) in grads.iter().enumerate() {
            for i in 0..p[pi].len() {
                let orig = p[pi].data[i];
                p[pi].data[i] = orig + h;
                let up = objective(&p);
                p[pi].data[i] = orig - h;
                let down = objective(&p);
                p[pi].data[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = grad.data[i];
                assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "param {pi}[{i}]: fd {fd} vs analytic {an}");
            }
        }
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (k, stride, pad, h, w) in [(3, 1, 1, 5, 4), (3, 2, 1, 6, 4), (1, 1, 0, 3, 3), (3, 2, 1, 2, 2)] {
            let params = vec![rand_tensor(&[2, h, w], &mut rng), rand_tensor(&[3, 2, k, k], &mut rng), rand_tensor(&[3], &mut rng)];
            check(params, |t| {
                let (x, wv, b) = (t.param(0), t.param(1), t.param(2));
                t.conv(x, wv, b, stride, pad)
            });
        }
    }

    #[test]
    fn norm_silu_add_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = vec![
            rand_tensor(&[4, 3, 2], &mut rng),
            rand_tensor(&[4], &mut rng),
            rand_tensor(&[4], &mut rng),
            rand_tensor(&[4], &mut rng),
        ];
        check(params, |t| {
            let (x, g, b, v) = (t.param(0), t.param(1), t.param(2), t.param(3));
            let n = t.group_norm(x, g, b, 2);
            let s = t.silu(n);
            let a = t.add_channel(s, v);
            t.add(a, x)
        });
    }

    #[test]
    fn linear_and_upsample_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = vec![rand_tensor(&[3], &mut rng), rand_tensor(&[2, 3], &mut rng), rand_tensor(&[2], &mut rng), rand_tensor(&[2, 2, 3], &mut rng)];
        check(params, |t| {
            let (x, w, b, img) = (t.param(0), t.param(1), t.param(2), t.param(3));
            let l = t.linear(x, w, b);
            let up = t.upsample2x(img);
            t.add_channel(up, l)
        });
    }

    #[test]
    fn attention_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = vec![rand_tensor(&[24, 2, 3], &mut rng)];
        check(params, |t| {
            let x = t.param(0);
            t.attention(x, 2, Rope2d { base: 10.0 })
        });
    }
}
