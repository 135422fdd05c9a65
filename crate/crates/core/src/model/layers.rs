//! Differentiable building blocks: convolution, linear, layer norm, GELU,
//! pixel shuffle and nearest upsampling.
//!
//! Every layer exposes `forward` producing the output plus whatever it needs
//! to run `backward` later. Feature maps are (channels, height, width);
//! token matrices are (tokens, channels). Convolutions run as im2col plus a
//! matrix product, which is where almost all training time goes.

use ndarray::{Array1, Array2, Array3, Array4};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// 3x3 same-padding convolution, stride 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// (out, in, 3, 3)
    pub w: Array4<f64>,
    pub b: Array1<f64>,
}

/// Column matrix of 3x3 neighborhoods: (in*9, h*w).
fn im2col(x: &Array3<f64>) -> Array2<f64> {
    let (c_in, h, w) = x.dim();
    let mut col = Array2::zeros((c_in * 9, h * w));
    for c in 0..c_in {
        for ki in 0..3usize {
            for kj in 0..3usize {
                let row = c * 9 + ki * 3 + kj;
                for i in 0..h {
                    let si = i as isize + ki as isize - 1;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    for j in 0..w {
                        let sj = j as isize + kj as isize - 1;
                        if sj < 0 || sj >= w as isize {
                            continue;
                        }
                        col[[row, i * w + j]] = x[[c, si as usize, sj as usize]];
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-add columns back into an image.
fn col2im(dcol: &Array2<f64>, c_in: usize, h: usize, w: usize) -> Array3<f64> {
    let mut dx = Array3::zeros((c_in, h, w));
    for c in 0..c_in {
        for ki in 0..3usize {
            for kj in 0..3usize {
                let row = c * 9 + ki * 3 + kj;
                for i in 0..h {
                    let si = i as isize + ki as isize - 1;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    for j in 0..w {
                        let sj = j as isize + kj as isize - 1;
                        if sj < 0 || sj >= w as isize {
                            continue;
                        }
                        dx[[c, si as usize, sj as usize]] += dcol[[row, i * w + j]];
                    }
                }
            }
        }
    }
    dx
}

pub struct ConvCache {
    col: Array2<f64>,
    in_dim: (usize, usize, usize),
}

impl Conv2d {
    pub fn zeros(c_out: usize, c_in: usize) -> Self {
        Conv2d { w: Array4::zeros((c_out, c_in, 3, 3)), b: Array1::zeros(c_out) }
    }

    /// Fan-in scaled uniform init, biases zero.
    pub fn init(c_out: usize, c_in: usize, rng: &mut ChaCha12Rng) -> Self {
        let bound = 1.0 / ((c_in * 9) as f64).sqrt();
        let w = Array4::from_shape_fn((c_out, c_in, 3, 3), |_| rng.random_range(-bound..bound));
        Conv2d { w, b: Array1::zeros(c_out) }
    }

    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, ConvCache) {
        let (c_in, h, w) = x.dim();
        let c_out = self.w.dim().0;
        let col = im2col(x);
        let w2 = self.w.view().into_shape_with_order((c_out, c_in * 9)).unwrap();
        let mut y2 = w2.dot(&col);
        for (mut row, &bias) in y2.rows_mut().into_iter().zip(self.b.iter()) {
            row += bias;
        }
        let y = y2.into_shape_with_order((c_out, h, w)).unwrap();
        (y, ConvCache { col, in_dim: (c_in, h, w) })
    }

    /// Returns (dx, dw, db).
    pub fn backward(&self, cache: &ConvCache, dy: &Array3<f64>) -> (Array3<f64>, Array4<f64>, Array1<f64>) {
        let (c_in, h, w) = cache.in_dim;
        let c_out = self.w.dim().0;
        let dy2 = dy.view().into_shape_with_order((c_out, h * w)).unwrap();
        let dw = dy2
            .dot(&cache.col.t())
            .into_shape_with_order((c_out, c_in, 3, 3))
            .unwrap();
        let db = dy2.sum_axis(ndarray::Axis(1));
        let w2 = self.w.view().into_shape_with_order((c_out, c_in * 9)).unwrap();
        let dcol = w2.t().dot(&dy2);
        let dx = col2im(&dcol, c_in, h, w);
        (dx, dw, db)
    }
}

/// Dense layer on token matrices: y = x w^T + b.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// (out, in)
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

pub struct LinearCache {
    x: Array2<f64>,
}

impl Linear {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Linear { w: Array2::zeros((out, inp)), b: Array1::zeros(out) }
    }

    /// Truncated-normal init (std 0.02, clipped at 2 std), biases zero.
    pub fn init(out: usize, inp: usize, rng: &mut ChaCha12Rng) -> Self {
        let w = Array2::from_shape_fn((out, inp), |_| loop {
            let u1: f64 = rng.random_range(f64::EPSILON..1.0);
            let u2: f64 = rng.random_range(0.0..1.0);
            let n = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos() * 0.02;
            if n.abs() <= 0.04 {
                break n;
            }
        });
        Linear { w, b: Array1::zeros(out) }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LinearCache) {
        let mut y = x.dot(&self.w.t());
        for mut row in y.rows_mut() {
            row += &self.b;
        }
        (y, LinearCache { x: x.clone() })
    }

    /// Returns (dx, dw, db).
    pub fn backward(&self, cache: &LinearCache, dy: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        let dx = dy.dot(&self.w);
        let dw = dy.t().dot(&cache.x);
        let db = dy.sum_axis(ndarray::Axis(0));
        (dx, dw, db)
    }
}

/// Layer normalization over the channel dimension of (tokens, channels).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

const LN_EPS: f64 = 1e-6;

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm { gamma: Array1::ones(dim), beta: Array1::zeros(dim) }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let (t, c) = x.dim();
        let mut xhat = Array2::zeros((t, c));
        let mut inv_std = Array1::zeros(t);
        let mut y = Array2::zeros((t, c));
        for i in 0..t {
            let row = x.row(i);
            let mu = row.sum() / c as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let xh = (x[[i, j]] - mu) * is;
                xhat[[i, j]] = xh;
                y[[i, j]] = self.gamma[j] * xh + self.beta[j];
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    /// Returns (dx, dgamma, dbeta).
    pub fn backward(&self, cache: &LayerNormCache, dy: &Array2<f64>) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
        let (t, c) = dy.dim();
        let cf = c as f64;
        let mut dgamma = Array1::zeros(c);
        let mut dbeta = Array1::zeros(c);
        let mut dx = Array2::zeros((t, c));
        for i in 0..t {
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for j in 0..c {
                let d = dy[[i, j]];
                let xh = cache.xhat[[i, j]];
                dgamma[j] += d * xh;
                dbeta[j] += d;
                let dxhat = d * self.gamma[j];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xh;
            }
            let is = cache.inv_std[i];
            for j in 0..c {
                let dxhat = dy[[i, j]] * self.gamma[j];
                dx[[i, j]] = is * (dxhat - sum_dxhat / cf - cache.xhat[[i, j]] * sum_dxhat_xhat / cf);
            }
        }
        (dx, dgamma, dbeta)
    }
}

const GELU_C: f64 = 0.044715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// GELU (tanh form) on a flat slice; returns output.
pub fn gelu(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

/// Derivative of [`gelu`].
pub fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x)
}

/// Rearrange (c*r^2, h, w) into (c, h*r, w*r).
pub fn pixel_shuffle(x: &Array3<f64>, r: usize) -> Array3<f64> {
    let (cr2, h, w) = x.dim();
    let c = cr2 / (r * r);
    debug_assert_eq!(c * r * r, cr2);
    let mut y = Array3::zeros((c, h * r, w * r));
    for cc in 0..c {
        for di in 0..r {
            for dj in 0..r {
                let src = cc * r * r + di * r + dj;
                for i in 0..h {
                    for j in 0..w {
                        y[[cc, i * r + di, j * r + dj]] = x[[src, i, j]];
                    }
                }
            }
        }
    }
    y
}

/// Adjoint (= inverse permutation) of [`pixel_shuffle`].
pub fn pixel_shuffle_back(dy: &Array3<f64>, r: usize) -> Array3<f64> {
    let (c, hr, wr) = dy.dim();
    let (h, w) = (hr / r, wr / r);
    let mut dx = Array3::zeros((c * r * r, h, w));
    for cc in 0..c {
        for di in 0..r {
            for dj in 0..r {
                let dst = cc * r * r + di * r + dj;
                for i in 0..h {
                    for j in 0..w {
                        dx[[dst, i, j]] = dy[[cc, i * r + di, j * r + dj]];
                    }
                }
            }
        }
    }
    dx
}

/// Nearest-neighbor upsampling of every channel by factor `s`.
pub fn nearest_upsample(x: &Array3<f64>, s: usize) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let mut y = Array3::zeros((c, h * s, w * s));
    for cc in 0..c {
        for i in 0..h * s {
            for j in 0..w * s {
                y[[cc, i, j]] = x[[cc, i / s, j / s]];
            }
        }
    }
    y
}

/// Adjoint of [`nearest_upsample`]: sum over each s x s block.
pub fn nearest_upsample_back(dy: &Array3<f64>, s: usize) -> Array3<f64> {
    let (c, hs, ws) = dy.dim();
    let (h, w) = (hs / s, ws / s);
    let mut dx = Array3::zeros((c, h, w));
    for cc in 0..c {
        for i in 0..hs {
            for j in 0..ws {
                dx[[cc, i / s, j / s]] += dy[[cc, i, j]];
            }
        }
    }
    dx
}

/// Row-wise softmax with an optional additive mask.
pub fn softmax_rows(scores: &Array2<f64>, mask: Option<&Array2<f64>>) -> Array2<f64> {
    let (t, _) = scores.dim();
    let mut p = scores.clone();
    if let Some(m) = mask {
        p += m;
    }
    for i in 0..t {
        let mut row = p.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    p
}

/// Backward through a row-wise softmax given its output `p`.
pub fn softmax_rows_back(p: &Array2<f64>, dp: &Array2<f64>) -> Array2<f64> {
    let (t, c) = p.dim();
    let mut ds = Array2::zeros((t, c));
    for i in 0..t {
        let dot: f64 = (0..c).map(|j| p[[i, j]] * dp[[i, j]]).sum();
        for j in 0..c {
            ds[[i, j]] = p[[i, j]] * (dp[[i, j]] - dot);
        }
    }
    ds
}
