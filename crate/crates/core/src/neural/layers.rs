//! Layer primitives with explicit backward passes. Parameters live in a shared
//! [`Params`] store and gradients in a parallel [`Grads`]; layers hold only indices and
//! shapes, so a trained network is immutable during inference.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::matrix::{gemm, Matrix};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    /// Part of the feature-extraction backbone rather than the prediction head.
    pub backbone: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Params {
    pub items: Vec<Param>,
}

impl Params {
    pub(crate) fn add(&mut self, name: String, value: Matrix, backbone: bool) -> usize {
        self.items.push(Param {
            name,
            value,
            backbone,
        });
        self.items.len() - 1
    }

    pub fn get(&self, i: usize) -> &Matrix {
        &self.items[i].value
    }

    pub fn zero_grads(&self) -> Grads {
        Grads(
            self.items
                .iter()
                .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect(),
        )
    }

    pub fn count(&self) -> usize {
        self.items.iter().map(|p| p.value.data().len()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.items
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, v: &[f64]) {
        let mut k = 0;
        for p in &mut self.items {
            let d = p.value.data_mut();
            d.copy_from_slice(&v[k..k + d.len()]);
            k += d.len();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Matrix>);

impl Grads {
    pub fn flat(&self) -> Vec<f64> {
        self.0
            .iter()
            .flat_map(|g| g.data().iter().copied())
            .collect()
    }

    fn acc(&mut self, i: usize) -> &mut [f64] {
        self.0[i].data_mut()
    }
}

fn uniform(rng: &mut Rng, rows: usize, cols: usize, a: f64) -> Matrix {
    let v = (0..rows * cols).map(|_| rng.random_range(-a..=a)).collect();
    Matrix::from_vec(rows, cols, v).expect("shape")
}

pub(crate) fn normal(rng: &mut Rng, rows: usize, cols: usize, sd: f64) -> Matrix {
    let n = Normal::new(0.0, sd).expect("sd");
    let v = (0..rows * cols).map(|_| n.sample(rng)).collect();
    Matrix::from_vec(rows, cols, v).expect("shape")
}

/// y = x Wᵀ + b with W stored `out x in`.
#[derive(Debug, Clone)]
pub(crate) struct Linear {
    w: usize,
    b: usize,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(
        ps: &mut Params,
        name: &str,
        input: usize,
        output: usize,
        backbone: bool,
        rng: &mut Rng,
    ) -> Self {
        let a = (6.0 / (input + output) as f64).sqrt();
        let w = ps.add(
            format!("{name}.weight"),
            uniform(rng, output, input, a),
            backbone,
        );
        let b = ps.add(format!("{name}.bias"), Matrix::zeros(1, output), backbone);
        Self {
            w,
            b,
            input,
            output,
        }
    }

    pub fn forward(&self, ps: &Params, x: &Matrix) -> Matrix {
        let n = x.rows();
        let mut y = Matrix::zeros(n, self.output);
        let b = ps.get(self.b).data();
        for r in 0..n {
            y.row_mut(r).copy_from_slice(b);
        }
        gemm(
            n,
            self.input,
            self.output,
            1.0,
            x.data(),
            false,
            ps.get(self.w).data(),
            true,
            1.0,
            y.data_mut(),
        );
        y
    }

    pub fn backward(&self, ps: &Params, g: &mut Grads, x: &Matrix, dy: &Matrix) -> Matrix {
        let n = x.rows();
        gemm(
            self.output,
            n,
            self.input,
            1.0,
            dy.data(),
            true,
            x.data(),
            false,
            1.0,
            g.acc(self.w),
        );
        let gb = g.acc(self.b);
        for r in dy.iter_rows() {
            for (a, v) in gb.iter_mut().zip(r) {
                *a += v;
            }
        }
        let mut dx = Matrix::zeros(n, self.input);
        gemm(
            n,
            self.output,
            self.input,
            1.0,
            dy.data(),
            false,
            ps.get(self.w).data(),
            false,
            0.0,
            dx.data_mut(),
        );
        dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Gelu,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - x.tanh().powi(2),
            Activation::Gelu => {
                let u = GELU_C * (x + 0.044715 * x * x * x);
                let t = u.tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
            }
        }
    }

    pub fn forward(self, x: &Matrix) -> Matrix {
        map(x, |v| self.apply(v))
    }

    pub fn backward(self, x: &Matrix, dy: &Matrix) -> Matrix {
        let v = x
            .data()
            .iter()
            .zip(dy.data())
            .map(|(&a, &d)| d * self.derivative(a))
            .collect();
        Matrix::from_vec(x.rows(), x.cols(), v).expect("shape")
    }
}

fn map(x: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    Matrix::from_vec(x.rows(), x.cols(), x.data().iter().map(|&v| f(v)).collect()).expect("shape")
}

/// Inverted dropout; returns the output and the scaled keep mask.
pub(crate) fn dropout(x: &Matrix, p: f64, rng: &mut Rng) -> (Matrix, Vec<f64>) {
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..x.data().len())
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    let y = x.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
    (
        Matrix::from_vec(x.rows(), x.cols(), y).expect("shape"),
        mask,
    )
}

pub(crate) fn dropout_backward(dy: &Matrix, mask: &[f64]) -> Matrix {
    let v = dy.data().iter().zip(mask).map(|(a, m)| a * m).collect();
    Matrix::from_vec(dy.rows(), dy.cols(), v).expect("shape")
}

pub(crate) fn add(a: &Matrix, b: &Matrix) -> Matrix {
    let v = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Matrix::from_vec(a.rows(), a.cols(), v).expect("shape")
}

const LN_EPS: f64 = 1e-5;

/// Row-wise layer normalization with learned gain and offset.
#[derive(Debug, Clone)]
pub(crate) struct LayerNorm {
    gamma: usize,
    beta: usize,
    dim: usize,
}

impl LayerNorm {
    pub fn new(ps: &mut Params, name: &str, dim: usize, backbone: bool) -> Self {
        let ones = Matrix::from_vec(1, dim, vec![1.0; dim]).expect("shape");
        let gamma = ps.add(format!("{name}.gamma"), ones, backbone);
        let beta = ps.add(format!("{name}.beta"), Matrix::zeros(1, dim), backbone);
        Self { gamma, beta, dim }
    }

    fn stats(row: &[f64]) -> (f64, f64) {
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, 1.0 / (var + LN_EPS).sqrt())
    }

    pub fn forward(&self, ps: &Params, x: &Matrix) -> Matrix {
        let (g, b) = (ps.get(self.gamma).data(), ps.get(self.beta).data());
        let mut y = Matrix::zeros(x.rows(), self.dim);
        for (r, row) in x.iter_rows().enumerate() {
            let (mean, inv) = Self::stats(row);
            for (j, o) in y.row_mut(r).iter_mut().enumerate() {
                *o = (row[j] - mean) * inv * g[j] + b[j];
            }
        }
        y
    }

    pub fn backward(&self, ps: &Params, grads: &mut Grads, x: &Matrix, dy: &Matrix) -> Matrix {
        let g = ps.get(self.gamma).data();
        let n = self.dim as f64;
        let mut dx = Matrix::zeros(x.rows(), self.dim);
        let mut dg = vec![0.0; self.dim];
        let mut db = vec![0.0; self.dim];
        for (r, row) in x.iter_rows().enumerate() {
            let (mean, inv) = Self::stats(row);
            let d = dy.row(r);
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for j in 0..self.dim {
                let xh = (row[j] - mean) * inv;
                dg[j] += d[j] * xh;
                db[j] += d[j];
                let dxh = d[j] * g[j];
                s1 += dxh;
                s2 += dxh * xh;
            }
            for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
                let xh = (row[j] - mean) * inv;
                *o = inv * (d[j] * g[j] - s1 / n - xh * s2 / n);
            }
        }
        for (a, v) in grads.acc(self.gamma).iter_mut().zip(dg) {
            *a += v;
        }
        for (a, v) in grads.acc(self.beta).iter_mut().zip(db) {
            *a += v;
        }
        dx
    }
}

/// 2-D convolution over `channels x height x width` rows, zero padding `kernel / 2`.
#[derive(Debug, Clone)]
pub(crate) struct Conv2d {
    w: usize,
    b: usize,
    pub c_in: usize,
    pub c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
    pub h: usize,
    pub wd: usize,
    pub ho: usize,
    pub wo: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut Params,
        name: &str,
        (c_in, h, wd): (usize, usize, usize),
        c_out: usize,
        k: usize,
        stride: usize,
        backbone: bool,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = c_in * k * k;
        let w = ps.add(
            format!("{name}.weight"),
            normal(rng, c_out, fan_in, (2.0 / fan_in as f64).sqrt()),
            backbone,
        );
        let b = ps.add(format!("{name}.bias"), Matrix::zeros(1, c_out), backbone);
        let pad = k / 2;
        let ho = (h + 2 * pad).saturating_sub(k) / stride + 1;
        let wo = (wd + 2 * pad).saturating_sub(k) / stride + 1;
        Self {
            w,
            b,
            c_in,
            c_out,
            k,
            stride,
            pad,
            h,
            wd,
            ho,
            wo,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.c_out * self.ho * self.wo
    }

    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        let (k, s, p) = (self.k, self.stride, self.pad as isize);
        let n = self.ho * self.wo;
        for c in 0..self.c_in {
            for di in 0..k {
                for dj in 0..k {
                    let r = (c * k + di) * k + dj;
                    let out = &mut col[r * n..(r + 1) * n];
                    for oi in 0..self.ho {
                        let i = (oi * s + di) as isize - p;
                        for oj in 0..self.wo {
                            let j = (oj * s + dj) as isize - p;
                            out[oi * self.wo + oj] = if i >= 0
                                && j >= 0
                                && (i as usize) < self.h
                                && (j as usize) < self.wd
                            {
                                x[(c * self.h + i as usize) * self.wd + j as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], dx: &mut [f64]) {
        let (k, s, p) = (self.k, self.stride, self.pad as isize);
        let n = self.ho * self.wo;
        for c in 0..self.c_in {
            for di in 0..k {
                for dj in 0..k {
                    let r = (c * k + di) * k + dj;
                    let src = &col[r * n..(r + 1) * n];
                    for oi in 0..self.ho {
                        let i = (oi * s + di) as isize - p;
                        if i < 0 || i as usize >= self.h {
                            continue;
                        }
                        for oj in 0..self.wo {
                            let j = (oj * s + dj) as isize - p;
                            if j >= 0 && (j as usize) < self.wd {
                                dx[(c * self.h + i as usize) * self.wd + j as usize] +=
                                    src[oi * self.wo + oj];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, ps: &Params, x: &Matrix) -> Matrix {
        let rows = self.c_in * self.k * self.k;
        let n = self.ho * self.wo;
        let mut col = vec![0.0; rows * n];
        let mut y = Matrix::zeros(x.rows(), self.out_dim());
        let b = ps.get(self.b).data();
        for s in 0..x.rows() {
            self.im2col(x.row(s), &mut col);
            let out = y.row_mut(s);
            for (c, chunk) in out.chunks_mut(n).enumerate() {
                chunk.iter_mut().for_each(|v| *v = b[c]);
            }
            gemm(
                self.c_out,
                rows,
                n,
                1.0,
                ps.get(self.w).data(),
                false,
                &col,
                false,
                1.0,
                out,
            );
        }
        y
    }

    pub fn backward(&self, ps: &Params, g: &mut Grads, x: &Matrix, dy: &Matrix) -> Matrix {
        let rows = self.c_in * self.k * self.k;
        let n = self.ho * self.wo;
        let mut col = vec![0.0; rows * n];
        let mut dcol = vec![0.0; rows * n];
        let mut dx = Matrix::zeros(x.rows(), self.c_in * self.h * self.wd);
        for s in 0..x.rows() {
            self.im2col(x.row(s), &mut col);
            let d = dy.row(s);
            gemm(
                self.c_out,
                n,
                rows,
                1.0,
                d,
                false,
                &col,
                true,
                1.0,
                g.acc(self.w),
            );
            let gb = g.acc(self.b);
            for (c, chunk) in d.chunks(n).enumerate() {
                gb[c] += chunk.iter().sum::<f64>();
            }
            gemm(
                rows,
                self.c_out,
                n,
                1.0,
                ps.get(self.w).data(),
                true,
                d,
                false,
                0.0,
                &mut dcol,
            );
            self.col2im(&dcol, dx.row_mut(s));
        }
        dx
    }
}

/// Non-overlapping max pooling; trailing rows/columns that do not fill a window are dropped.
#[derive(Debug, Clone)]
pub(crate) struct MaxPool {
    c: usize,
    h: usize,
    w: usize,
    size: usize,
    pub ho: usize,
    pub wo: usize,
}

impl MaxPool {
    pub fn new((c, h, w): (usize, usize, usize), size: usize) -> Self {
        Self {
            c,
            h,
            w,
            size,
            ho: h / size,
            wo: w / size,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.c * self.ho * self.wo
    }

    pub fn forward(&self, x: &Matrix) -> (Matrix, Vec<u32>) {
        let mut y = Matrix::zeros(x.rows(), self.out_dim());
        let mut arg = vec![0u32; x.rows() * self.out_dim()];
        for s in 0..x.rows() {
            let src = x.row(s);
            let out = y.row_mut(s);
            for c in 0..self.c {
                for oi in 0..self.ho {
                    for oj in 0..self.wo {
                        let mut best = (f64::NEG_INFINITY, 0usize);
                        for di in 0..self.size {
                            for dj in 0..self.size {
                                let idx = (c * self.h + oi * self.size + di) * self.w
                                    + oj * self.size
                                    + dj;
                                if src[idx] > best.0 {
                                    best = (src[idx], idx);
                                }
                            }
                        }
                        let o = (c * self.ho + oi) * self.wo + oj;
                        out[o] = best.0;
                        arg[s * self.out_dim() + o] = best.1 as u32;
                    }
                }
            }
        }
        (y, arg)
    }

    pub fn backward(&self, arg: &[u32], dy: &Matrix) -> Matrix {
        let mut dx = Matrix::zeros(dy.rows(), self.c * self.h * self.w);
        for s in 0..dy.rows() {
            let d = dy.row(s);
            let out = dx.row_mut(s);
            for (o, &v) in d.iter().enumerate() {
                out[arg[s * self.out_dim() + o] as usize] += v;
            }
        }
        dx
    }
}

/// Multi-head self-attention over `samples * tokens` rows.
#[derive(Debug, Clone)]
pub(crate) struct Attention {
    qkv: Linear,
    proj: Linear,
    heads: usize,
    dim: usize,
}

pub(crate) struct AttentionTape {
    qkv: Matrix,
    /// probs[sample * heads + head], each `tokens x tokens`.
    pub probs: Vec<Matrix>,
    ctx: Matrix,
}

impl Attention {
    pub fn new(
        ps: &mut Params,
        name: &str,
        dim: usize,
        heads: usize,
        backbone: bool,
        rng: &mut Rng,
    ) -> Self {
        let qkv = Linear::new(ps, &format!("{name}.qkv"), dim, 3 * dim, backbone, rng);
        let proj = Linear::new(ps, &format!("{name}.proj"), dim, dim, backbone, rng);
        Self {
            qkv,
            proj,
            heads,
            dim,
        }
    }

    fn head_slice(m: &Matrix, rows: std::ops::Range<usize>, off: usize, dh: usize) -> Matrix {
        let mut v = Vec::with_capacity(rows.len() * dh);
        for r in rows.clone() {
            v.extend_from_slice(&m.row(r)[off..off + dh]);
        }
        Matrix::from_vec(rows.len(), dh, v).expect("shape")
    }

    pub fn forward(&self, ps: &Params, x: &Matrix, tokens: usize) -> (Matrix, AttentionTape) {
        let qkv = self.qkv.forward(ps, x);
        let samples = x.rows() / tokens;
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut ctx = Matrix::zeros(x.rows(), self.dim);
        let mut probs = Vec::with_capacity(samples * self.heads);
        for s in 0..samples {
            let rows = s * tokens..(s + 1) * tokens;
            for h in 0..self.heads {
                let q = Self::head_slice(&qkv, rows.clone(), h * dh, dh);
                let k = Self::head_slice(&qkv, rows.clone(), self.dim + h * dh, dh);
                let v = Self::head_slice(&qkv, rows.clone(), 2 * self.dim + h * dh, dh);
                let mut p = Matrix::zeros(tokens, tokens);
                gemm(
                    tokens,
                    dh,
                    tokens,
                    scale,
                    q.data(),
                    false,
                    k.data(),
                    true,
                    0.0,
                    p.data_mut(),
                );
                for r in 0..tokens {
                    softmax(p.row_mut(r));
                }
                let mut c = vec![0.0; tokens * dh];
                gemm(
                    tokens,
                    tokens,
                    dh,
                    1.0,
                    p.data(),
                    false,
                    v.data(),
                    false,
                    0.0,
                    &mut c,
                );
                for (t, chunk) in c.chunks(dh).enumerate() {
                    ctx.row_mut(s * tokens + t)[h * dh..(h + 1) * dh].copy_from_slice(chunk);
                }
                probs.push(p);
            }
        }
        let y = self.proj.forward(ps, &ctx);
        (y, AttentionTape { qkv, probs, ctx })
    }

    pub fn backward(
        &self,
        ps: &Params,
        g: &mut Grads,
        x: &Matrix,
        tape: &AttentionTape,
        dy: &Matrix,
        tokens: usize,
    ) -> Matrix {
        let dctx = self.proj.backward(ps, g, &tape.ctx, dy);
        let samples = x.rows() / tokens;
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dqkv = Matrix::zeros(x.rows(), 3 * self.dim);
        for s in 0..samples {
            let rows = s * tokens..(s + 1) * tokens;
            for h in 0..self.heads {
                let p = &tape.probs[s * self.heads + h];
                let q = Self::head_slice(&tape.qkv, rows.clone(), h * dh, dh);
                let k = Self::head_slice(&tape.qkv, rows.clone(), self.dim + h * dh, dh);
                let v = Self::head_slice(&tape.qkv, rows.clone(), 2 * self.dim + h * dh, dh);
                let dc = Self::head_slice(&dctx, rows.clone(), h * dh, dh);
                let mut dp = vec![0.0; tokens * tokens];
                gemm(
                    tokens,
                    dh,
                    tokens,
                    1.0,
                    dc.data(),
                    false,
                    v.data(),
                    true,
                    0.0,
                    &mut dp,
                );
                let mut dv = vec![0.0; tokens * dh];
                gemm(
                    tokens,
                    tokens,
                    dh,
                    1.0,
                    p.data(),
                    true,
                    dc.data(),
                    false,
                    0.0,
                    &mut dv,
                );
                // softmax backward, row by row
                for r in 0..tokens {
                    let pr = p.row(r);
                    let dr = &mut dp[r * tokens..(r + 1) * tokens];
                    let s: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                    for (d, &pv) in dr.iter_mut().zip(pr) {
                        *d = pv * (*d - s);
                    }
                }
                let mut dq = vec![0.0; tokens * dh];
                gemm(
                    tokens,
                    tokens,
                    dh,
                    scale,
                    &dp,
                    false,
                    k.data(),
                    false,
                    0.0,
                    &mut dq,
                );
                let mut dk = vec![0.0; tokens * dh];
                gemm(
                    tokens,
                    tokens,
                    dh,
                    scale,
                    &dp,
                    true,
                    q.data(),
                    false,
                    0.0,
                    &mut dk,
                );
                for t in 0..tokens {
                    let row = dqkv.row_mut(s * tokens + t);
                    row[h * dh..(h + 1) * dh].copy_from_slice(&dq[t * dh..(t + 1) * dh]);
                    row[self.dim + h * dh..self.dim + (h + 1) * dh]
                        .copy_from_slice(&dk[t * dh..(t + 1) * dh]);
                    row[2 * self.dim + h * dh..2 * self.dim + (h + 1) * dh]
                        .copy_from_slice(&dv[t * dh..(t + 1) * dh]);
                }
            }
        }
        self.qkv.backward(ps, g, x, &dqkv)
    }
}

pub(crate) fn softmax(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}
