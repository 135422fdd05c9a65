//! Residual shifted-window attention block.
//!
//! Pre-norm layout: x + W-MSA(LN(x)), then x + MLP(LN(x)). Odd blocks cyclic-
//! shift the feature map by half a window before partitioning and mask
//! attention across the wrapped boundaries, so windows exchange information
//! between blocks without ever attending through the seam.

use ndarray::{Array2, Array3};
use rand_chacha::ChaCha12Rng;

use super::layers::{
    gelu, gelu_grad, softmax_rows, softmax_rows_back, LayerNorm, LayerNormCache, Linear, LinearCache,
};

/// (C,H,W) image to (H*W, C) token matrix.
pub fn to_tokens(x: &Array3<f64>) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let mut t = Array2::zeros((h * w, c));
    for cc in 0..c {
        for i in 0..h {
            for j in 0..w {
                t[[i * w + j, cc]] = x[[cc, i, j]];
            }
        }
    }
    t
}

/// Inverse of [`to_tokens`].
pub fn to_image(t: &Array2<f64>, h: usize, w: usize) -> Array3<f64> {
    let c = t.ncols();
    let mut x = Array3::zeros((c, h, w));
    for cc in 0..c {
        for i in 0..h {
            for j in 0..w {
                x[[cc, i, j]] = t[[i * w + j, cc]];
            }
        }
    }
    x
}

/// Cyclic shift: out[c, i, j] = x[c, (i+di) mod H, (j+dj) mod W].
pub fn roll(x: &Array3<f64>, di: isize, dj: isize) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let mut y = Array3::zeros((c, h, w));
    for cc in 0..c {
        for i in 0..h {
            let si = (i as isize + di).rem_euclid(h as isize) as usize;
            for j in 0..w {
                let sj = (j as isize + dj).rem_euclid(w as isize) as usize;
                y[[cc, i, j]] = x[[cc, si, sj]];
            }
        }
    }
    y
}

/// Split an image into non-overlapping window token matrices, windows
/// row-major, tokens row-major within each window.
fn partition(x: &Array3<f64>, win: usize) -> Vec<Array2<f64>> {
    let (c, h, w) = x.dim();
    let mut out = Vec::with_capacity((h / win) * (w / win));
    for wi in 0..h / win {
        for wj in 0..w / win {
            let mut t = Array2::zeros((win * win, c));
            for ii in 0..win {
                for jj in 0..win {
                    for cc in 0..c {
                        t[[ii * win + jj, cc]] = x[[cc, wi * win + ii, wj * win + jj]];
                    }
                }
            }
            out.push(t);
        }
    }
    out
}

fn merge(windows: &[Array2<f64>], c: usize, h: usize, w: usize, win: usize) -> Array3<f64> {
    let mut x = Array3::zeros((c, h, w));
    let per_row = w / win;
    for (n, t) in windows.iter().enumerate() {
        let (wi, wj) = (n / per_row, n % per_row);
        for ii in 0..win {
            for jj in 0..win {
                for cc in 0..c {
                    x[[cc, wi * win + ii, wj * win + jj]] = t[[ii * win + jj, cc]];
                }
            }
        }
    }
    x
}

/// Additive attention masks for shifted windows: -1e30 between tokens that
/// came from different sides of the wrap-around seam, 0 otherwise. Region
/// ids follow the rolled layout, so the wrapped strips are the last `shift`
/// rows/columns.
fn shift_masks(h: usize, w: usize, win: usize, shift: usize) -> Vec<Option<Array2<f64>>> {
    let region = |len: usize, i: usize| -> usize {
        if i < len - win {
            0
        } else if i < len - shift {
            1
        } else {
            2
        }
    };
    let mut masks = Vec::with_capacity((h / win) * (w / win));
    for wi in 0..h / win {
        for wj in 0..w / win {
            let mut ids = vec![0usize; win * win];
            let mut uniform = true;
            for ii in 0..win {
                for jj in 0..win {
                    let id = 3 * region(h, wi * win + ii) + region(w, wj * win + jj);
                    ids[ii * win + jj] = id;
                    if id != ids[0] {
                        uniform = false;
                    }
                }
            }
            if uniform {
                masks.push(None);
            } else {
                let t = win * win;
                let mut m = Array2::zeros((t, t));
                for a in 0..t {
                    for b in 0..t {
                        if ids[a] != ids[b] {
                            m[[a, b]] = -1e30;
                        }
                    }
                }
                masks.push(Some(m));
            }
        }
    }
    masks
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwinBlock {
    pub norm1: LayerNorm,
    /// channels -> 3 channels (query, key, value)
    pub qkv: Linear,
    pub proj: Linear,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub heads: usize,
    pub window: usize,
    pub shift: usize,
}

pub struct AttnWindowCache {
    qkv: Array2<f64>,
    qkv_cache: LinearCache,
    probs: Vec<Array2<f64>>,
    proj_cache: LinearCache,
}

pub struct SwinBlockCache {
    ln1: LayerNormCache,
    windows: Vec<AttnWindowCache>,
    ln2: LayerNormCache,
    fc1_cache: LinearCache,
    h1: Array2<f64>,
    fc2_cache: LinearCache,
    dim: (usize, usize, usize),
}

impl SwinBlock {
    pub fn init(channels: usize, heads: usize, window: usize, shift: usize, rng: &mut ChaCha12Rng) -> Self {
        SwinBlock {
            norm1: LayerNorm::new(channels),
            qkv: Linear::init(3 * channels, channels, rng),
            proj: Linear::init(channels, channels, rng),
            norm2: LayerNorm::new(channels),
            fc1: Linear::init(2 * channels, channels, rng),
            fc2: Linear::init(channels, 2 * channels, rng),
            heads,
            window,
            shift,
        }
    }

    fn attend_window(&self, tokens: &Array2<f64>, mask: Option<&Array2<f64>>) -> (Array2<f64>, AttnWindowCache) {
        let (t, c) = tokens.dim();
        let d = c / self.heads;
        let inv_sqrt_d = 1.0 / (d as f64).sqrt();
        let (qkv, qkv_cache) = self.qkv.forward(tokens);
        let mut out = Array2::zeros((t, c));
        let mut probs = Vec::with_capacity(self.heads);
        for hd in 0..self.heads {
            let q = qkv.slice(ndarray::s![.., hd * d..(hd + 1) * d]);
            let k = qkv.slice(ndarray::s![.., c + hd * d..c + (hd + 1) * d]);
            let v = qkv.slice(ndarray::s![.., 2 * c + hd * d..2 * c + (hd + 1) * d]);
            let scores = q.dot(&k.t()) * inv_sqrt_d;
            let p = softmax_rows(&scores, mask);
            let o = p.dot(&v);
            out.slice_mut(ndarray::s![.., hd * d..(hd + 1) * d]).assign(&o);
            probs.push(p);
        }
        let (y, proj_cache) = self.proj.forward(&out);
        (y, AttnWindowCache { qkv, qkv_cache, probs, proj_cache })
    }

    /// Returns (d_tokens, d_qkv_w, d_qkv_b, d_proj_w, d_proj_b).
    #[allow(clippy::type_annotations)]
    fn attend_window_back(
        &self,
        cache: &AttnWindowCache,
        dout: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>, ndarray::Array1<f64>, Array2<f64>, ndarray::Array1<f64>) {
        let (t, c) = (cache.qkv.nrows(), cache.qkv.ncols() / 3);
        let d = c / self.heads;
        let inv_sqrt_d = 1.0 / (d as f64).sqrt();
        let (do_, dproj_w, dproj_b) = self.proj.backward(&cache.proj_cache, dout);
        let mut dqkv = Array2::zeros((t, 3 * c));
        for hd in 0..self.heads {
            let q = cache.qkv.slice(ndarray::s![.., hd * d..(hd + 1) * d]);
            let k = cache.qkv.slice(ndarray::s![.., c + hd * d..c + (hd + 1) * d]);
            let v = cache.qkv.slice(ndarray::s![.., 2 * c + hd * d..2 * c + (hd + 1) * d]);
            let p = &cache.probs[hd];
            let do_h = do_.slice(ndarray::s![.., hd * d..(hd + 1) * d]);
            let dp = do_h.dot(&v.t());
            let dv = p.t().dot(&do_h);
            let dscores = softmax_rows_back(p, &dp) * inv_sqrt_d;
            let dq = dscores.dot(&k);
            let dk = dscores.t().dot(&q);
            dqkv.slice_mut(ndarray::s![.., hd * d..(hd + 1) * d]).assign(&dq);
            dqkv.slice_mut(ndarray::s![.., c + hd * d..c + (hd + 1) * d]).assign(&dk);
            dqkv.slice_mut(ndarray::s![.., 2 * c + hd * d..2 * c + (hd + 1) * d]).assign(&dv);
        }
        let (dtokens, dqkv_w, dqkv_b) = self.qkv.backward(&cache.qkv_cache, &dqkv);
        (dtokens, dqkv_w, dqkv_b, dproj_w, dproj_b)
    }

    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, SwinBlockCache) {
        let (c, h, w) = x.dim();
        let t0 = to_tokens(x);
        let (n1, ln1) = self.norm1.forward(&t0);
        let n1img = to_image(&n1, h, w);
        let rolled = if self.shift > 0 { roll(&n1img, self.shift as isize, self.shift as isize) } else { n1img };
        let masks = if self.shift > 0 {
            shift_masks(h, w, self.window, self.shift)
        } else {
            vec![None; (h / self.window) * (w / self.window)]
        };
        let window_tokens = partition(&rolled, self.window);
        let mut outs = Vec::with_capacity(window_tokens.len());
        let mut caches = Vec::with_capacity(window_tokens.len());
        for (tok, mask) in window_tokens.iter().zip(masks.iter()) {
            let (o, cache) = self.attend_window(tok, mask.as_ref());
            outs.push(o);
            caches.push(cache);
        }
        let merged = merge(&outs, c, h, w, self.window);
        let attn_img = if self.shift > 0 { roll(&merged, -(self.shift as isize), -(self.shift as isize)) } else { merged };
        let x1 = x + &attn_img;

        let t1 = to_tokens(&x1);
        let (n2, ln2) = self.norm2.forward(&t1);
        let (h1, fc1_cache) = self.fc1.forward(&n2);
        let g = h1.mapv(gelu);
        let (h2, fc2_cache) = self.fc2.forward(&g);
        let y = &x1 + &to_image(&h2, h, w);
        (y, SwinBlockCache { ln1, windows: caches, ln2, fc1_cache, h1, fc2_cache, dim: (c, h, w) })
    }

    /// Returns (dx, parameter gradients in a zero-initialized block shape).
    pub fn backward(&self, cache: &SwinBlockCache, dy: &Array3<f64>) -> (Array3<f64>, SwinBlock) {
        let (c, h, w) = cache.dim;
        let mut grads = self.zeros_like();

        // y = x1 + img(fc2(gelu(fc1(norm2(tokens(x1)))))).
        let dh2 = to_tokens(dy);
        let (dg, dfc2_w, dfc2_b) = self.fc2.backward(&cache.fc2_cache, &dh2);
        grads.fc2.w += &dfc2_w;
        grads.fc2.b += &dfc2_b;
        let dh1 = &dg * &cache.h1.mapv(gelu_grad);
        let (dn2, dfc1_w, dfc1_b) = self.fc1.backward(&cache.fc1_cache, &dh1);
        grads.fc1.w += &dfc1_w;
        grads.fc1.b += &dfc1_b;
        let (dt1, dg2, db2) = self.norm2.backward(&cache.ln2, &dn2);
        grads.norm2.gamma += &dg2;
        grads.norm2.beta += &db2;
        let dx1 = dy + &to_image(&dt1, h, w);

        // x1 = x + unroll(merge(attend(partition(roll(img(norm1(tokens(x)))))))).
        let dmerged = if self.shift > 0 { roll(&dx1, self.shift as isize, self.shift as isize) } else { dx1.clone() };
        let dwindows = partition(&dmerged, self.window);
        let mut dtoks = Vec::with_capacity(dwindows.len());
        for (wc, dwin) in cache.windows.iter().zip(dwindows.iter()) {
            let (dt, dqkv_w, dqkv_b, dproj_w, dproj_b) = self.attend_window_back(wc, dwin);
            grads.qkv.w += &dqkv_w;
            grads.qkv.b += &dqkv_b;
            grads.proj.w += &dproj_w;
            grads.proj.b += &dproj_b;
            dtoks.push(dt);
        }
        let drolled = merge(&dtoks, c, h, w, self.window);
        let dn1img = if self.shift > 0 { roll(&drolled, -(self.shift as isize), -(self.shift as isize)) } else { drolled };
        let dn1 = to_tokens(&dn1img);
        let (dt0, dg1, db1) = self.norm1.backward(&cache.ln1, &dn1);
        grads.norm1.gamma += &dg1;
        grads.norm1.beta += &db1;
        let dx = &dx1 + &to_image(&dt0, h, w);
        (dx, grads)
    }

    pub fn zeros_like(&self) -> SwinBlock {
        SwinBlock {
            norm1: LayerNorm { gamma: ndarray::Array1::zeros(self.norm1.gamma.len()), beta: ndarray::Array1::zeros(self.norm1.beta.len()) },
            qkv: Linear::zeros(self.qkv.w.nrows(), self.qkv.w.ncols()),
            proj: Linear::zeros(self.proj.w.nrows(), self.proj.w.ncols()),
            norm2: LayerNorm { gamma: ndarray::Array1::zeros(self.norm2.gamma.len()), beta: ndarray::Array1::zeros(self.norm2.beta.len()) },
            fc1: Linear::zeros(self.fc1.w.nrows(), self.fc1.w.ncols()),
            fc2: Linear::zeros(self.fc2.w.nrows(), self.fc2.w.ncols()),
            heads: self.heads,
            window: self.window,
            shift: self.shift,
        }
    }
}
