//! Compressed-sensing recovery by iterative shrinkage-thresholding (ISTA)
//! with 2D DCT sparsity.
//!
//! The measurement model is the stride mask of [`crate::sm::downsample`]:
//! y = x[::s, ::s]. Its normal operator is a projection (operator norm 1),
//! so the default unit step is safe. Each iteration takes a gradient step
//! in image space, then soft-thresholds in the orthonormal DCT domain, so
//! the objective 0.5 ||Ax - y||^2 + lambda ||DCT(x)||_1 never increases.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::Upsampler;
use crate::error::{Error, Result};
use crate::sm::{ComplexImage, ScaleFactor};

/// Sparsifying transform identifier; only the 2D discrete cosine basis is
/// implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsifyingTransform {
    Dct2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsConfig {
    pub transform: SparsifyingTransform,
    pub lambda: f64,
    pub iterations: usize,
    pub step_size: f64,
}

impl Default for CsConfig {
    fn default() -> Self {
        CsConfig { transform: SparsifyingTransform::Dct2, lambda: 1e-3, iterations: 500, step_size: 1.0 }
    }
}

impl CsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("lambda must be nonnegative and finite".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !(self.step_size > 0.0 && self.step_size <= 1.0) {
            return Err(Error::Config("step_size must lie in (0, 1] for the stride-mask operator".into()));
        }
        Ok(())
    }
}

/// Soft-threshold sign(v) * max(|v| - tau, 0).
pub fn soft_threshold(v: f64, tau: f64) -> f64 {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        0.0
    }
}

/// Orthonormal DCT-II matrix of size n.
fn dct_matrix(n: usize) -> Array2<f64> {
    let mut c = Array2::zeros((n, n));
    let norm0 = (1.0 / n as f64).sqrt();
    let norm = (2.0 / n as f64).sqrt();
    for k in 0..n {
        let a = if k == 0 { norm0 } else { norm };
        for i in 0..n {
            c[[k, i]] = a * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2.0 * n as f64)).cos();
        }
    }
    c
}

/// 2D orthonormal DCT: C X C^T.
pub fn dct2(x: &Array2<f64>) -> Array2<f64> {
    let (ny, nx) = x.dim();
    let cy = dct_matrix(ny);
    let cx = dct_matrix(nx);
    cy.dot(x).dot(&cx.t())
}

/// Inverse of [`dct2`]: C^T Z C.
pub fn idct2(z: &Array2<f64>) -> Array2<f64> {
    let (ny, nx) = z.dim();
    let cy = dct_matrix(ny);
    let cx = dct_matrix(nx);
    cy.t().dot(z).dot(&cx)
}

/// Result of one CS recovery: the image, whether the objective converged
/// before the iteration cap, and the objective trace of the best iterate.
#[derive(Debug, Clone)]
pub struct CsRecovery {
    pub image: ComplexImage,
    pub converged: bool,
    pub objective: f64,
}

fn objective(x: &Array2<f64>, y: &Array2<f64>, s: usize, lambda: f64) -> f64 {
    let mut data = 0.0;
    for i in 0..y.nrows() {
        for j in 0..y.ncols() {
            let d = x[[s * i, s * j]] - y[[i, j]];
            data += d * d;
        }
    }
    let l1: f64 = if lambda > 0.0 { dct2(x).iter().map(|v| v.abs()).sum() } else { 0.0 };
    0.5 * data + lambda * l1
}

/// ISTA on one real plane, warm-started from `init`.
fn ista_plane(y: &Array2<f64>, init: Array2<f64>, s: usize, cfg: &CsConfig) -> (Array2<f64>, bool, f64) {
    let mut x = init;
    let tau = cfg.lambda * cfg.step_size;
    let mut best = x.clone();
    let mut best_obj = objective(&x, y, s, cfg.lambda);
    let mut prev_obj = best_obj;
    let mut converged = false;
    for _ in 0..cfg.iterations {
        // Gradient step only touches sampled positions.
        for i in 0..y.nrows() {
            for j in 0..y.ncols() {
                let idx = [s * i, s * j];
                x[idx] -= cfg.step_size * (x[idx] - y[[i, j]]);
            }
        }
        if tau > 0.0 {
            let mut z = dct2(&x);
            z.mapv_inplace(|v| soft_threshold(v, tau));
            x = idct2(&z);
        }
        let obj = objective(&x, y, s, cfg.lambda);
        if obj < best_obj {
            best_obj = obj;
            best.assign(&x);
        }
        if (prev_obj - obj).abs() <= 1e-12 * prev_obj.abs().max(1e-12) {
            converged = true;
            break;
        }
        prev_obj = obj;
    }
    (best, converged, best_obj)
}

/// Recover one high-resolution frequency-component image from its stride
/// samples. Real and imaginary planes are solved independently; iterations
/// warm-start from the stride-aligned bicubic interpolant, which already
/// satisfies the data term, so the solver only has to sparsify.
pub fn cs_recover(sm_lr_row: &ComplexImage, s: ScaleFactor, cfg: &CsConfig) -> Result<CsRecovery> {
    cfg.validate()?;
    let sv = s.value();
    let grid = sm_lr_row.grid().upsampled(sv)?;
    let re = sm_lr_row.values().mapv(|z| z.re);
    let im = sm_lr_row.values().mapv(|z| z.im);
    let warm = super::strided_bicubic(sm_lr_row, s)?;
    let (xr, conv_r, obj_r) = ista_plane(&re, warm.values().mapv(|z| z.re), sv, cfg);
    let (xi, conv_i, obj_i) = ista_plane(&im, warm.values().mapv(|z| z.im), sv, cfg);
    let values = Array2::from_shape_fn((grid.ny(), grid.nx()), |(i, j)| Complex64::new(xr[[i, j]], xi[[i, j]]));
    Ok(CsRecovery { image: ComplexImage::new(grid, values)?, converged: conv_r && conv_i, objective: obj_r + obj_i })
}

pub struct CsUpsampler {
    cfg: CsConfig,
}

impl CsUpsampler {
    pub fn new(cfg: CsConfig) -> Self {
        CsUpsampler { cfg }
    }
}

impl Upsampler for CsUpsampler {
    fn name(&self) -> &'static str {
        "cs"
    }

    fn upsample(&self, img: &ComplexImage, s: ScaleFactor) -> Result<ComplexImage> {
        Ok(cs_recover(img, s, &self.cfg)?.image)
    }
}
