//! Network assembly: shallow conv head, residual body (shifted-window
//! attention or convolutional), pixel-shuffle upsampler and a two-channel
//! (real/imag) output head with a nearest-neighbor global skip.

use ndarray::{s, Array1, Array2, Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    gelu, gelu_grad, nearest_upsample, pixel_shuffle, pixel_shuffle_back, Conv2d, ConvCache,
};
use super::swin::{SwinBlock, SwinBlockCache};
use crate::error::{Error, Result};
use crate::rim::rim_encode;
use crate::sm::{ComplexImage, ScaleFactor, SystemMatrix};

/// Network hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub channels: usize,
    pub blocks: usize,
    pub window: usize,
    pub heads: usize,
    pub scale: ScaleFactor,
    pub attention_enabled: bool,
    pub rng_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 32,
            blocks: 2,
            window: 4,
            heads: 4,
            scale: ScaleFactor::new(4).expect("default scale"),
            attention_enabled: true,
            rng_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.heads == 0 || self.window == 0 {
            return Err(Error::Config("channels, heads and window must be positive".into()));
        }
        if self.channels % self.heads != 0 {
            return Err(Error::Config(format!(
                "channels {} not divisible by heads {}",
                self.channels, self.heads
            )));
        }
        if self.attention_enabled && self.window > 1 && self.channels % 2 != 0 {
            return Err(Error::Config("attention needs an even channel count".into()));
        }
        Ok(())
    }
}

/// One residual body block: windowed attention or plain convolutions.
#[derive(Debug, Clone, PartialEq)]
pub enum BodyBlock {
    Swin(SwinBlock),
    Conv(ConvBlock),
}

/// x + conv(gelu(conv(x))).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub c1: Conv2d,
    pub c2: Conv2d,
}

pub enum BodyCache {
    Swin(SwinBlockCache),
    Conv { c1: ConvCache, h: Array3<f64>, c2: ConvCache },
}

impl ConvBlock {
    fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, BodyCache) {
        let (h, c1_cache) = self.c1.forward(x);
        let g = h.mapv(gelu);
        let (y, c2_cache) = self.c2.forward(&g);
        (x + &y, BodyCache::Conv { c1: c1_cache, h, c2: c2_cache })
    }

    fn backward(&self, cache: &BodyCache, dy: &Array3<f64>) -> (Array3<f64>, ConvBlock) {
        let BodyCache::Conv { c1, h, c2 } = cache else { unreachable!() };
        let (dg, dw2, db2) = self.c2.backward(c2, dy);
        let dh = &dg * &h.mapv(gelu_grad);
        let (dx_inner, dw1, db1) = self.c1.backward(c1, &dh);
        let dx = dy + &dx_inner;
        (dx, ConvBlock { c1: Conv2d { w: dw1, b: db1 }, c2: Conv2d { w: dw2, b: db2 } })
    }
}

/// The full super-resolution network. Parameters live in the typed layer
/// structs; [`Model::visit_params`] walks them in a stable order for the
/// optimizer, checkpoints and gradient checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    /// 3 with the magnitude channel (RIM), 2 without.
    pub in_ch: usize,
    pub head: Conv2d,
    pub blocks: Vec<BodyBlock>,
    pub body_conv: Conv2d,
    pub pre_conv: Conv2d,
    pub up_convs: Vec<Conv2d>,
    pub tail: Conv2d,
}

pub struct FullCache {
    head: ConvCache,
    blocks: Vec<BodyCache>,
    body: ConvCache,
    pre: ConvCache,
    pre_out: Array3<f64>,
    ups: Vec<(ConvCache, Array3<f64>)>,
    tail: ConvCache,
}

impl Model {
    /// Build and initialize a model. `rim_enabled` selects the input arity.
    pub fn init(cfg: &ModelConfig, rim_enabled: bool) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.rng_seed);
        let c = cfg.channels;
        let in_ch = if rim_enabled { 3 } else { 2 };
        let head = Conv2d::init(c, in_ch, &mut rng);
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for i in 0..cfg.blocks {
            if cfg.attention_enabled {
                // Alternate plain and shifted windows.
                let shift = if i % 2 == 1 { cfg.window / 2 } else { 0 };
                blocks.push(BodyBlock::Swin(SwinBlock::init(c, cfg.heads, cfg.window, shift, &mut rng)));
            } else {
                blocks.push(BodyBlock::Conv(ConvBlock {
                    c1: Conv2d::init(c, c, &mut rng),
                    c2: Conv2d::init(c, c, &mut rng),
                }));
            }
        }
        let body_conv = Conv2d::init(c, c, &mut rng);
        let pre_conv = Conv2d::init(c, c, &mut rng);
        let stages = cfg.scale.value().trailing_zeros() as usize;
        let mut up_convs = Vec::with_capacity(stages);
        for _ in 0..stages {
            up_convs.push(Conv2d::init(4 * c, c, &mut rng));
        }
        // Zero-initialized output head: the initial prediction is exactly the
        // nearest-neighbor skip.
        let tail = Conv2d::zeros(2, c);
        Ok(Model { cfg: cfg.clone(), in_ch, head, blocks, body_conv, pre_conv, up_convs, tail })
    }

    pub fn rim_enabled(&self) -> bool {
        self.in_ch == 3
    }

    fn check_input(&self, x: &Array3<f64>) -> Result<()> {
        let (c, h, w) = x.dim();
        if c != self.in_ch {
            return Err(Error::ShapeMismatch(format!("expected {} input channels, got {c}", self.in_ch)));
        }
        if self.cfg.attention_enabled && (h % self.cfg.window != 0 || w % self.cfg.window != 0) {
            return Err(Error::ShapeMismatch(format!(
                "window {} must divide the {}x{} input",
                self.cfg.window, h, w
            )));
        }
        Ok(())
    }

    /// Forward pass: (in_ch, h, w) -> (2, h*s, w*s).
    pub fn forward(&self, x: &Array3<f64>) -> Result<(Array3<f64>, FullCache)> {
        self.check_input(x)?;
        let (f0, head_cache) = self.head.forward(x);
        let mut b = f0.clone();
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (nb, cache) = match block {
                BodyBlock::Swin(sb) => {
                    let (y, c) = sb.forward(&b);
                    (y, BodyCache::Swin(c))
                }
                BodyBlock::Conv(cb) => cb.forward(&b),
            };
            b = nb;
            block_caches.push(cache);
        }
        let (body_out, body_cache) = self.body_conv.forward(&b);
        let f1 = &f0 + &body_out;
        let (pre_raw, pre_cache) = self.pre_conv.forward(&f1);
        let mut u = pre_raw.mapv(gelu);
        let pre_out = pre_raw;
        let mut up_caches = Vec::with_capacity(self.up_convs.len());
        for conv in &self.up_convs {
            let (expanded, cache) = conv.forward(&u);
            let shuffled = pixel_shuffle(&expanded, 2);
            up_caches.push((cache, u));
            u = shuffled;
        }
        let (y, tail_cache) = self.tail.forward(&u);
        let skip = nearest_upsample(&x.slice(s![0..2, .., ..]).to_owned(), self.cfg.scale.value());
        let out = &y + &skip;
        Ok((
            out,
            FullCache {
                head: head_cache,
                blocks: block_caches,
                body: body_cache,
                pre: pre_cache,
                pre_out,
                ups: up_caches,
                tail: tail_cache,
            },
        ))
    }

    /// Backward pass from the output gradient; returns parameter gradients
    /// in a zero-based model of the same shape.
    pub fn backward(&self, cache: &FullCache, dout: &Array3<f64>) -> Model {
        let mut grads = self.zeros_like();
        let (du_tail, dtail_w, dtail_b) = self.tail.backward(&cache.tail, dout);
        grads.tail.w += &dtail_w;
        grads.tail.b += &dtail_b;
        let mut du = du_tail;
        for (conv, gconv, (ccache, _)) in itertools_rev(&self.up_convs, &mut grads.up_convs, &cache.ups) {
            let dexpanded = pixel_shuffle_back(&du, 2);
            let (dinput, dw, db) = conv.backward(ccache, &dexpanded);
            gconv.w += &dw;
            gconv.b += &db;
            du = dinput;
        }
        let dpre_raw = &du * &cache.pre_out.mapv(gelu_grad);
        let (df1, dpre_w, dpre_b) = self.pre_conv.backward(&cache.pre, &dpre_raw);
        grads.pre_conv.w += &dpre_w;
        grads.pre_conv.b += &dpre_b;
        // f1 = f0 + body_conv(blocks(f0)).
        let (mut db_feat, dbody_w, dbody_b) = self.body_conv.backward(&cache.body, &df1);
        grads.body_conv.w += &dbody_w;
        grads.body_conv.b += &dbody_b;
        for (block, gblock, bcache) in itertools_rev_blocks(&self.blocks, &mut grads.blocks, &cache.blocks) {
            match (block, gblock, bcache) {
                (BodyBlock::Swin(sb), BodyBlock::Swin(gb), BodyCache::Swin(sc)) => {
                    let (dx, g) = sb.backward(sc, &db_feat);
                    add_swin(gb, &g);
                    db_feat = dx;
                }
                (BodyBlock::Conv(cb), BodyBlock::Conv(gb), cache @ BodyCache::Conv { .. }) => {
                    let (dx, g) = cb.backward(cache, &db_feat);
                    gb.c1.w += &g.c1.w;
                    gb.c1.b += &g.c1.b;
                    gb.c2.w += &g.c2.w;
                    gb.c2.b += &g.c2.b;
                    db_feat = dx;
                }
                _ => unreachable!("block/cache kind mismatch"),
            }
        }
        let df0 = &db_feat + &df1;
        let (_dx, dhead_w, dhead_b) = self.head.backward(&cache.head, &df0);
        grads.head.w += &dhead_w;
        grads.head.b += &dhead_b;
        grads
    }

    /// Same structure with all parameter tensors zeroed.
    pub fn zeros_like(&self) -> Model {
        let mut m = self.clone();
        m.visit_params_mut(&mut |_, s| s.fill(0.0));
        m
    }

    /// Walk every parameter tensor in a stable order.
    pub fn visit_params(&self, f: &mut impl FnMut(&str, &[f64])) {
        let conv = |name: &str, c: &Conv2d, f: &mut dyn FnMut(&str, &[f64])| {
            f(&format!("{name}.w"), c.w.as_slice().unwrap());
            f(&format!("{name}.b"), c.b.as_slice().unwrap());
        };
        conv("head", &self.head, f);
        for (i, b) in self.blocks.iter().enumerate() {
            match b {
                BodyBlock::Swin(sb) => {
                    f(&format!("block{i}.norm1.gamma"), sb.norm1.gamma.as_slice().unwrap());
                    f(&format!("block{i}.norm1.beta"), sb.norm1.beta.as_slice().unwrap());
                    f(&format!("block{i}.qkv.w"), sb.qkv.w.as_slice().unwrap());
                    f(&format!("block{i}.qkv.b"), sb.qkv.b.as_slice().unwrap());
                    f(&format!("block{i}.proj.w"), sb.proj.w.as_slice().unwrap());
                    f(&format!("block{i}.proj.b"), sb.proj.b.as_slice().unwrap());
                    f(&format!("block{i}.norm2.gamma"), sb.norm2.gamma.as_slice().unwrap());
                    f(&format!("block{i}.norm2.beta"), sb.norm2.beta.as_slice().unwrap());
                    f(&format!("block{i}.fc1.w"), sb.fc1.w.as_slice().unwrap());
                    f(&format!("block{i}.fc1.b"), sb.fc1.b.as_slice().unwrap());
                    f(&format!("block{i}.fc2.w"), sb.fc2.w.as_slice().unwrap());
                    f(&format!("block{i}.fc2.b"), sb.fc2.b.as_slice().unwrap());
                }
                BodyBlock::Conv(cb) => {
                    conv(&format!("block{i}.c1"), &cb.c1, f);
                    conv(&format!("block{i}.c2"), &cb.c2, f);
                }
            }
        }
        conv("body_conv", &self.body_conv, f);
        conv("pre_conv", &self.pre_conv, f);
        for (i, c) in self.up_convs.iter().enumerate() {
            conv(&format!("up{i}"), c, f);
        }
        conv("tail", &self.tail, f);
    }

    /// Mutable variant of [`visit_params`], same order.
    pub fn visit_params_mut(&mut self, f: &mut impl FnMut(&str, &mut [f64])) {
        let conv = |name: &str, c: &mut Conv2d, f: &mut dyn FnMut(&str, &mut [f64])| {
            f(&format!("{name}.w"), c.w.as_slice_mut().unwrap());
            f(&format!("{name}.b"), c.b.as_slice_mut().unwrap());
        };
        conv("head", &mut self.head, f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            match b {
                BodyBlock::Swin(sb) => {
                    f(&format!("block{i}.norm1.gamma"), sb.norm1.gamma.as_slice_mut().unwrap());
                    f(&format!("block{i}.norm1.beta"), sb.norm1.beta.as_slice_mut().unwrap());
                    f(&format!("block{i}.qkv.w"), sb.qkv.w.as_slice_mut().unwrap());
                    f(&format!("block{i}.qkv.b"), sb.qkv.b.as_slice_mut().unwrap());
                    f(&format!("block{i}.proj.w"), sb.proj.w.as_slice_mut().unwrap());
                    f(&format!("block{i}.proj.b"), sb.proj.b.as_slice_mut().unwrap());
                    f(&format!("block{i}.norm2.gamma"), sb.norm2.gamma.as_slice_mut().unwrap());
                    f(&format!("block{i}.norm2.beta"), sb.norm2.beta.as_slice_mut().unwrap());
                    f(&format!("block{i}.fc1.w"), sb.fc1.w.as_slice_mut().unwrap());
                    f(&format!("block{i}.fc1.b"), sb.fc1.b.as_slice_mut().unwrap());
                    f(&format!("block{i}.fc2.w"), sb.fc2.w.as_slice_mut().unwrap());
                    f(&format!("block{i}.fc2.b"), sb.fc2.b.as_slice_mut().unwrap());
                }
                BodyBlock::Conv(cb) => {
                    conv(&format!("block{i}.c1"), &mut cb.c1, f);
                    conv(&format!("block{i}.c2"), &mut cb.c2, f);
                }
            }
        }
        conv("body_conv", &mut self.body_conv, f);
        conv("pre_conv", &mut self.pre_conv, f);
        for (i, c) in self.up_convs.iter_mut().enumerate() {
            conv(&format!("up{i}"), c, f);
        }
        conv("tail", &mut self.tail, f);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, s| n += s.len());
        n
    }

    /// Concatenate all parameters in visit order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit_params(&mut |_, s| out.extend_from_slice(s));
        out
    }

    /// Load all parameters from a flat buffer in visit order.
    pub fn from_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        self.visit_params_mut(&mut |_, s| {
            s.copy_from_slice(&flat[off..off + s.len()]);
            off += s.len();
        });
        debug_assert_eq!(off, flat.len());
    }

    /// Named tensor shapes in visit order (for the checkpoint header).
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let push4 = |out: &mut Vec<(String, Vec<usize>)>, name: String, a: &Array4<f64>| {
            out.push((name, a.shape().to_vec()));
        };
        let push2 = |out: &mut Vec<(String, Vec<usize>)>, name: String, a: &Array2<f64>| {
            out.push((name, a.shape().to_vec()));
        };
        let push1 = |out: &mut Vec<(String, Vec<usize>)>, name: String, a: &Array1<f64>| {
            out.push((name, a.shape().to_vec()));
        };
        let conv = |out: &mut Vec<(String, Vec<usize>)>, name: &str, c: &Conv2d| {
            push4(out, format!("{name}.w"), &c.w);
            push1(out, format!("{name}.b"), &c.b);
        };
        conv(&mut out, "head", &self.head);
        for (i, b) in self.blocks.iter().enumerate() {
            match b {
                BodyBlock::Swin(sb) => {
                    push1(&mut out, format!("block{i}.norm1.gamma"), &sb.norm1.gamma);
                    push1(&mut out, format!("block{i}.norm1.beta"), &sb.norm1.beta);
                    push2(&mut out, format!("block{i}.qkv.w"), &sb.qkv.w);
                    push1(&mut out, format!("block{i}.qkv.b"), &sb.qkv.b);
                    push2(&mut out, format!("block{i}.proj.w"), &sb.proj.w);
                    push1(&mut out, format!("block{i}.proj.b"), &sb.proj.b);
                    push1(&mut out, format!("block{i}.norm2.gamma"), &sb.norm2.gamma);
                    push1(&mut out, format!("block{i}.norm2.beta"), &sb.norm2.beta);
                    push2(&mut out, format!("block{i}.fc1.w"), &sb.fc1.w);
                    push1(&mut out, format!("block{i}.fc1.b"), &sb.fc1.b);
                    push2(&mut out, format!("block{i}.fc2.w"), &sb.fc2.w);
                    push1(&mut out, format!("block{i}.fc2.b"), &sb.fc2.b);
                }
                BodyBlock::Conv(cb) => {
                    conv(&mut out, &format!("block{i}.c1"), &cb.c1);
                    conv(&mut out, &format!("block{i}.c2"), &cb.c2);
                }
            }
        }
        conv(&mut out, "body_conv", &self.body_conv);
        conv(&mut out, "pre_conv", &self.pre_conv);
        for (i, c) in self.up_convs.iter().enumerate() {
            conv(&mut out, &format!("up{i}"), c);
        }
        conv(&mut out, "tail", &self.tail);
        out
    }

    /// Add `a * other` into self (same structure), used for gradient sums.
    pub fn axpy(&mut self, a: f64, other_flat: &[f64]) {
        let mut off = 0;
        self.visit_params_mut(&mut |_, s| {
            for v in s.iter_mut() {
                *v += a * other_flat[off];
                off += 1;
            }
        });
    }

    /// Recover one frequency-component image: encode, forward, de-normalize
    /// by the input's own scale.
    pub fn upsample_image(&self, img: &ComplexImage) -> Result<ComplexImage> {
        let rim = rim_encode(img)?;
        let input = if self.rim_enabled() {
            rim.channels().clone()
        } else {
            rim.channels().slice(s![0..2, .., ..]).to_owned()
        };
        let (out, _) = self.forward(&input)?;
        let hr_grid = img.grid().upsampled(self.cfg.scale.value())?;
        ComplexImage::from_planes(hr_grid, &out, rim.scale())
    }

    /// Apply the network to every row of a low-resolution matrix.
    pub fn recover(&self, sm_lr: &SystemMatrix) -> Result<SystemMatrix> {
        use rayon::prelude::*;
        let hr_grid = sm_lr.grid().upsampled(self.cfg.scale.value())?;
        let images: Result<Vec<ComplexImage>> = (0..sm_lr.k())
            .into_par_iter()
            .map(|k| self.upsample_image(&sm_lr.row_image(k)?))
            .collect();
        SystemMatrix::from_row_images(
            hr_grid,
            sm_lr.freqs().to_vec(),
            &images?,
            sm_lr.row_snr().map(|v| v.to_vec()),
        )
    }

    /// Zero every shift so all blocks use unshifted windows (used to verify
    /// that the shift changes the output exactly when attention is on).
    pub fn clear_shifts(&mut self) {
        for b in &mut self.blocks {
            if let BodyBlock::Swin(sb) = b {
                sb.shift = 0;
            }
        }
    }
}

fn add_swin(dst: &mut SwinBlock, src: &SwinBlock) {
    dst.norm1.gamma += &src.norm1.gamma;
    dst.norm1.beta += &src.norm1.beta;
    dst.qkv.w += &src.qkv.w;
    dst.qkv.b += &src.qkv.b;
    dst.proj.w += &src.proj.w;
    dst.proj.b += &src.proj.b;
    dst.norm2.gamma += &src.norm2.gamma;
    dst.norm2.beta += &src.norm2.beta;
    dst.fc1.w += &src.fc1.w;
    dst.fc1.b += &src.fc1.b;
    dst.fc2.w += &src.fc2.w;
    dst.fc2.b += &src.fc2.b;
}

/// Reverse zip over up-convolution stages.
fn itertools_rev<'a>(
    convs: &'a [Conv2d],
    grads: &'a mut [Conv2d],
    caches: &'a [(ConvCache, Array3<f64>)],
) -> impl Iterator<Item = (&'a Conv2d, &'a mut Conv2d, &'a (ConvCache, Array3<f64>))> {
    convs.iter().rev().zip(grads.iter_mut().rev()).zip(caches.iter().rev()).map(|((c, g), k)| (c, g, k))
}

/// Reverse zip over body blocks.
fn itertools_rev_blocks<'a>(
    blocks: &'a [BodyBlock],
    grads: &'a mut [BodyBlock],
    caches: &'a [BodyCache],
) -> impl Iterator<Item = (&'a BodyBlock, &'a mut BodyBlock, &'a BodyCache)> {
    blocks.iter().rev().zip(grads.iter_mut().rev()).zip(caches.iter().rev()).map(|((b, g), c)| (b, g, c))
}

/// The learned model behind the shared recovery interface.
pub struct ModelUpsampler {
    pub model: Model,
}

impl crate::baseline::Upsampler for ModelUpsampler {
    fn name(&self) -> &'static str {
        "model"
    }

    fn upsample(&self, img: &ComplexImage, s: ScaleFactor) -> Result<ComplexImage> {
        if s != self.model.cfg.scale {
            return Err(Error::Config(format!(
                "model was built for scale {}, requested {}",
                self.model.cfg.scale.value(),
                s.value()
            )));
        }
        self.model.upsample_image(img)
    }
}
