//! AdamW training loop with a cosine learning-rate schedule.
//!
//! Batch gradients are computed sample by sample (optionally on worker
//! threads) and reduced in sample order, so a fixed seed gives bit-identical
//! runs regardless of worker count.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

use super::checkpoint::save_checkpoint;
use super::net::{Model, ModelConfig};
use crate::dataset::SrDataset;
use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::loss::{create_loss, eval_channels, LossConfig};

/// Optimization settings. `loss_name` selects from the loss registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub loss_name: String,
    pub rim_enabled: bool,
    pub val_interval: usize,
    pub checkpoint_interval: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            batch_size: 8,
            lr_init: 1e-3,
            lr_min: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            loss_name: "fsc".into(),
            rim_enabled: true,
            val_interval: 100,
            checkpoint_interval: 500,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::Config("iterations and batch_size must be at least 1".into()));
        }
        // lr_init = 0 is allowed: a null update leaves the model unchanged.
        if !(self.lr_init >= 0.0 && self.lr_init.is_finite()) {
            return Err(Error::Config(format!("lr_init must be finite and >= 0, got {}", self.lr_init)));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_init.max(self.lr_min)) {
            return Err(Error::Config("lr_min must be nonnegative".into()));
        }
        if self.val_interval == 0 || self.checkpoint_interval == 0 {
            return Err(Error::Config("val_interval and checkpoint_interval must be at least 1".into()));
        }
        Ok(())
    }

    /// Cosine schedule from lr_init down to lr_min over all iterations.
    pub fn learning_rate(&self, iteration: usize) -> f64 {
        let t = iteration as f64 / self.iterations.max(1) as f64;
        let lr_min = self.lr_min.min(self.lr_init);
        lr_min + 0.5 * (self.lr_init - lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// Loss curve and provenance of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Training loss at every iteration (before the update).
    pub losses: Vec<f64>,
    /// (iteration, validation nRMSE) at the validation interval.
    pub val_nrmse: Vec<(usize, f64)>,
    /// Batch row indices per iteration.
    pub batch_trace: Vec<Vec<usize>>,
    /// SHA-256 of the initial parameter buffer (f64 little-endian bytes).
    pub initial_params_digest: String,
    pub iterations_run: usize,
    pub wall_seconds: f64,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        *self.losses.last().unwrap_or(&f64::NAN)
    }

    /// CSV with columns iteration,train_loss,val_nrmse (validation column
    /// empty off the validation grid).
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("iteration,train_loss,val_nrmse\n");
        let val: std::collections::BTreeMap<usize, f64> = self.val_nrmse.iter().cloned().collect();
        for (i, loss) in self.losses.iter().enumerate() {
            let iter = i + 1;
            match val.get(&iter) {
                Some(v) => out.push_str(&format!("{iter},{loss},{v}\n")),
                None => out.push_str(&format!("{iter},{loss},\n")),
            }
        }
        out
    }
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl AdamW {
    fn new(n: usize) -> Self {
        AdamW { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, model: &mut Model, grads: &[f64], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let mut idx = 0;
        model.visit_params_mut(&mut |_, p| {
            for w in p.iter_mut() {
                let g = grads[idx];
                self.m[idx] = b1 * self.m[idx] + (1.0 - b1) * g;
                self.v[idx] = b2 * self.v[idx] + (1.0 - b2) * g * g;
                let mhat = self.m[idx] / bc1;
                let vhat = self.v[idx] / bc2;
                *w -= lr * (mhat / (vhat.sqrt() + 1e-8) + cfg.weight_decay * *w);
                idx += 1;
            }
        });
    }
}

/// Validation nRMSE over the given sample indices, on de-normalized values.
pub fn dataset_nrmse(model: &Model, dataset: &SrDataset, indices: &[usize]) -> Result<f64> {
    let parts: Result<Vec<(f64, f64)>> = indices
        .par_iter()
        .map(|&i| {
            let sample = &dataset.samples[i];
            let (pred, _) = model.forward(&sample.input)?;
            let s2 = sample.scale * sample.scale;
            let mut num = 0.0;
            let mut den = 0.0;
            for (p, t) in pred.iter().zip(sample.target.iter()) {
                num += s2 * (p - t) * (p - t);
                den += s2 * t * t;
            }
            Ok((num, den))
        })
        .collect();
    let (num, den) = parts?
        .into_iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    if den == 0.0 {
        return Err(Error::UndefinedMetric("validation set is identically zero".into()));
    }
    Ok((num / den).sqrt())
}

fn digest_params(model: &Model) -> String {
    let flat = model.to_flat();
    let mut bytes = Vec::with_capacity(flat.len() * 8);
    for v in &flat {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    crate::io::sha256_hex(&bytes)
}

/// Train a fresh model on the dataset's train split.
///
/// When `out_dir` is given, periodic checkpoints (`checkpoint_<iter>.smck`),
/// the final checkpoint (`checkpoint_final.smck`) and the loss curves
/// (`curves.csv`) are written there. A non-finite loss aborts with a
/// divergence error; the last periodic checkpoint on disk is the last good
/// state.
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    dataset: &SrDataset,
    out_dir: Option<&Path>,
) -> Result<(Model, TrainReport)> {
    train_cfg.validate()?;
    if model_cfg.scale != dataset.scale {
        return Err(Error::Config(format!(
            "model scale {} but dataset scale {}",
            model_cfg.scale.value(),
            dataset.scale.value()
        )));
    }
    if train_cfg.rim_enabled != dataset.rim_enabled {
        return Err(Error::Config("rim_enabled differs between trainer and dataset".into()));
    }
    let loss = create_loss(&train_cfg.loss_name, loss_cfg)?;
    let mut model = Model::init(model_cfg, train_cfg.rim_enabled)?;
    let initial_params_digest = digest_params(&model);
    let mut opt = AdamW::new(model.param_count());
    let mut order = dataset.splits.train.clone();
    let mut rng = ChaCha12Rng::seed_from_u64(train_cfg.rng_seed);
    order.shuffle(&mut rng);
    let mut cursor = 0usize;

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    let start = Instant::now();
    let mut losses = Vec::with_capacity(train_cfg.iterations);
    let mut val_nrmse = Vec::new();
    let mut batch_trace = Vec::with_capacity(train_cfg.iterations);
    let mut last_checkpoint: Option<usize> = None;

    for t in 0..train_cfg.iterations {
        // Epoch shuffling with a dropped tail keeps batches full and seeded.
        if cursor + train_cfg.batch_size > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let batch: Vec<usize> = if order.len() >= train_cfg.batch_size {
            order[cursor..cursor + train_cfg.batch_size].to_vec()
        } else {
            (0..train_cfg.batch_size).map(|i| order[i % order.len()]).collect()
        };
        cursor += train_cfg.batch_size;

        let results: Result<Vec<(f64, Vec<f64>)>> = batch
            .par_iter()
            .map(|&row| {
                let sample = &dataset.samples[row];
                let (pred, cache) = model.forward(&sample.input)?;
                let (value, grad) = eval_channels(loss.as_ref(), pred.view(), sample.target.view())?;
                let grads = model.backward(&cache, &grad);
                Ok((value, grads.to_flat()))
            })
            .collect();
        let results = results?;
        let inv_b = 1.0 / batch.len() as f64;
        let mut loss_value = 0.0;
        let mut grad_acc = vec![0.0f64; model.param_count()];
        for (v, g) in &results {
            loss_value += v * inv_b;
            for (a, b) in grad_acc.iter_mut().zip(g.iter()) {
                *a += b * inv_b;
            }
        }
        if !loss_value.is_finite() {
            let at = match last_checkpoint {
                Some(i) => format!("last good checkpoint at iteration {i}"),
                None => "no checkpoint written yet".into(),
            };
            return Err(Error::Divergence(format!("non-finite loss at iteration {}; {at}", t + 1)));
        }
        opt.step(&mut model, &grad_acc, train_cfg.learning_rate(t), train_cfg);
        losses.push(loss_value);
        batch_trace.push(batch);

        let iter = t + 1;
        if iter % train_cfg.val_interval == 0 || iter == train_cfg.iterations {
            if !dataset.splits.val.is_empty() {
                val_nrmse.push((iter, dataset_nrmse(&model, dataset, &dataset.splits.val)?));
            }
        }
        if let Some(dir) = out_dir {
            if iter % train_cfg.checkpoint_interval == 0 {
                save_checkpoint(&model, iter, train_cfg.rng_seed, &dir.join(format!("checkpoint_{iter:06}.smck")))?;
                last_checkpoint = Some(iter);
            }
        }
    }

    let report = TrainReport {
        losses,
        val_nrmse,
        batch_trace,
        initial_params_digest,
        iterations_run: train_cfg.iterations,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out_dir {
        save_checkpoint(&model, train_cfg.iterations, train_cfg.rng_seed, &dir.join("checkpoint_final.smck"))?;
        atomic_write(&dir.join("curves.csv"), report.curves_csv().as_bytes())?;
    }
    Ok((model, report))
}
