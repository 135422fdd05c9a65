//! Training losses with analytic gradients.
//!
//! Every loss returns its scalar value together with the gradient with
//! respect to the predicted image, so the training loop never needs
//! numerical differentiation. The variants are interchangeable behind the
//! [`Loss`] trait and are selected by name through [`create_loss`]:
//!
//! * `l1`, `l2` — pixelwise mean absolute / squared error.
//! * `ssim` — 1 - SSIM over non-overlapping windows.
//! * `ssim_ad` — patch-aggregated product of the absolute-difference
//!   luminance and structure terms.
//! * `fsc` — the structure-consistency loss: the global l1 error scaled by
//!   (1 + ssim_ad), so structural disagreement amplifies the pixel error
//!   while either term alone stays effective when the other vanishes.
//!
//! A central finite-difference oracle ([`finite_diff_grad`]) is part of the
//! public surface so gradient checks can run from the CLI as well as tests.

mod ad;
mod pixel;
mod ssim;

pub use ad::{l_ad, s_ad, FscLoss, SsimAdLoss};
pub use pixel::{L1Loss, L2Loss};
pub use ssim::SsimLoss;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Patch geometry and stabilizer constants.
///
/// Defaults: 8x8 non-overlapping patches, c1 = (0.01 L)^2 and
/// c2 = c3 = (0.03 L)^2 with dynamic range L = 1 after normalization, and
/// quadratic patch normalization (1/N^2) for the absolute-difference loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub window: usize,
    pub stride: usize,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub patch_norm_exponent: i32,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            window: 8,
            stride: 8,
            c1: 1e-4,
            c2: 9e-4,
            c3: 9e-4,
            patch_norm_exponent: 2,
        }
    }
}

impl LossConfig {
    pub fn validate_for(&self, ny: usize, nx: usize) -> Result<()> {
        if self.window == 0 || self.stride == 0 {
            return Err(Error::Config("window and stride must be at least 1".into()));
        }
        if self.window > ny || self.window > nx {
            return Err(Error::Config(format!(
                "window {} larger than image {}x{}",
                self.window, ny, nx
            )));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(Error::Config("stabilizers c1 and c2 must be positive".into()));
        }
        Ok(())
    }
}

/// Loss value plus the gradient with respect to the predicted image.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub grad: Array2<f64>,
}

/// First and second moments of one patch pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchStats {
    pub mu_x: f64,
    pub mu_y: f64,
    pub var_x: f64,
    pub var_y: f64,
    pub cov_xy: f64,
}

impl PatchStats {
    /// Population moments (divide by the patch size) in two passes.
    pub fn from_patches(x: &ArrayView2<f64>, y: &ArrayView2<f64>) -> PatchStats {
        let m = x.len() as f64;
        let mu_x = x.sum() / m;
        let mu_y = y.sum() / m;
        let mut var_x = 0.0;
        let mut var_y = 0.0;
        let mut cov_xy = 0.0;
        for (a, b) in x.iter().zip(y.iter()) {
            let dx = a - mu_x;
            let dy = b - mu_y;
            var_x += dx * dx;
            var_y += dy * dy;
            cov_xy += dx * dy;
        }
        PatchStats { mu_x, mu_y, var_x: var_x / m, var_y: var_y / m, cov_xy: cov_xy / m }
    }

    /// Product of standard deviations, computed as sqrt(var_x * var_y) so a
    /// patch pair related by an exact linear map cancels exactly against the
    /// covariance.
    pub fn sigma_product(&self) -> f64 {
        (self.var_x * self.var_y).sqrt()
    }

    /// |cov| <= sigma_x * sigma_y up to rounding.
    pub fn cauchy_schwarz_ok(&self) -> bool {
        self.cov_xy.abs() <= self.sigma_product() + 1e-9
    }
}

/// Visit the top-left corners of all full patches.
pub(crate) fn for_each_patch(ny: usize, nx: usize, window: usize, stride: usize, mut f: impl FnMut(usize, usize)) {
    let mut r = 0;
    while r + window <= ny {
        let mut c = 0;
        while c + window <= nx {
            f(r, c);
            c += stride;
        }
        r += stride;
    }
}

pub(crate) fn patch_count(ny: usize, nx: usize, window: usize, stride: usize) -> usize {
    let mut n = 0;
    for_each_patch(ny, nx, window, stride, |_, _| n += 1);
    n
}

pub(crate) fn check_pair(pred: &ArrayView2<f64>, gt: &ArrayView2<f64>) -> Result<()> {
    if pred.dim() != gt.dim() {
        return Err(Error::ShapeMismatch(format!("loss inputs {:?} vs {:?}", pred.dim(), gt.dim())));
    }
    if pred.iter().chain(gt.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("loss inputs contain non-finite entries".into()));
    }
    Ok(())
}

/// A differentiable image loss selectable by name.
pub trait Loss: Send + Sync {
    fn name(&self) -> &'static str;
    fn eval(&self, pred: ArrayView2<f64>, gt: ArrayView2<f64>) -> Result<LossEval>;
}

/// Names accepted by [`create_loss`], in registry order.
pub const LOSS_NAMES: [&str; 5] = ["l1", "l2", "ssim", "ssim_ad", "fsc"];

/// Build a loss by registry name.
pub fn create_loss(name: &str, cfg: &LossConfig) -> Result<Box<dyn Loss>> {
    match name {
        "l1" => Ok(Box::new(L1Loss)),
        "l2" => Ok(Box::new(L2Loss)),
        "ssim" => Ok(Box::new(SsimLoss::new(cfg.clone()))),
        "ssim_ad" => Ok(Box::new(SsimAdLoss::new(cfg.clone()))),
        "fsc" => Ok(Box::new(FscLoss::new(cfg.clone()))),
        other => Err(Error::Config(format!(
            "unknown loss '{other}', expected one of {LOSS_NAMES:?}"
        ))),
    }
}

/// Evaluate a loss channel by channel and average, returning the gradient
/// for every channel. Used for multi-channel (real/imag/...) predictions.
pub fn eval_channels(
    loss: &dyn Loss,
    pred: ArrayView3<f64>,
    gt: ArrayView3<f64>,
) -> Result<(f64, Array3<f64>)> {
    if pred.dim() != gt.dim() {
        return Err(Error::ShapeMismatch(format!(
            "channel tensors {:?} vs {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    let (ch, ny, nx) = pred.dim();
    if ch == 0 {
        return Err(Error::ShapeMismatch("need at least one channel".into()));
    }
    let mut value = 0.0;
    let mut grad = Array3::zeros((ch, ny, nx));
    for c in 0..ch {
        let e = loss.eval(pred.index_axis(ndarray::Axis(0), c), gt.index_axis(ndarray::Axis(0), c))?;
        value += e.value;
        grad.index_axis_mut(ndarray::Axis(0), c)
            .assign(&(e.grad / ch as f64));
    }
    Ok((value / ch as f64, grad))
}

/// Central-difference gradient of an arbitrary scalar loss function.
///
/// The step must lie in [1e-7, 1e-3]; anything else is a contract violation.
pub fn finite_diff_grad<F>(
    loss_fn: F,
    pred: &Array2<f64>,
    gt: &Array2<f64>,
    epsilon: f64,
) -> Result<Array2<f64>>
where
    F: Fn(&Array2<f64>, &Array2<f64>) -> Result<f64>,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::Contract(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let mut grad = Array2::zeros(pred.dim());
    let mut work = pred.clone();
    for idx in 0..pred.len() {
        let (i, j) = (idx / pred.ncols(), idx % pred.ncols());
        let orig = work[[i, j]];
        work[[i, j]] = orig + epsilon;
        let plus = loss_fn(&work, gt)?;
        work[[i, j]] = orig - epsilon;
        let minus = loss_fn(&work, gt)?;
        work[[i, j]] = orig;
        grad[[i, j]] = (plus - minus) / (2.0 * epsilon);
    }
    Ok(grad)
}

/// Norm-based relative error between a loss's analytic gradient and the
/// finite-difference oracle. Small gradients compare against an absolute
/// floor so identical-zero gradients report 0.
pub fn gradient_check(loss: &dyn Loss, pred: &Array2<f64>, gt: &Array2<f64>, epsilon: f64) -> Result<f64> {
    let analytic = loss.eval(pred.view(), gt.view())?.grad;
    let fd = finite_diff_grad(|p, g| loss.eval(p.view(), g.view()).map(|e| e.value), pred, gt, epsilon)?;
    let diff = (&analytic - &fd).mapv(|v| v * v).sum().sqrt();
    let scale = fd.mapv(|v| v * v).sum().sqrt();
    Ok(diff / scale.max(1e-12))
}
