//! Windowed SSIM loss (1 - SSIM) with analytic gradient.

use ndarray::{s, Array2, ArrayView2};

use super::{check_pair, for_each_patch, patch_count, Loss, LossConfig, LossEval, PatchStats};
use crate::error::Result;

/// 1 - SSIM over window x window patches.
///
/// Uses the standard luminance * contrast-structure form with C3 = C2, so a
/// patch contributes l(p) * (2 cov + C2)/(var_x + var_y + C2). SSIM lies in
/// [-1, 1] and the loss in [0, 2]; identical images give exactly 0.
pub struct SsimLoss {
    cfg: LossConfig,
}

impl SsimLoss {
    pub fn new(cfg: LossConfig) -> Self {
        SsimLoss { cfg }
    }

    /// Mean SSIM value (not the loss).
    pub fn ssim_value(&self, pred: ArrayView2<f64>, gt: ArrayView2<f64>) -> Result<f64> {
        Ok(1.0 - self.eval(pred, gt)?.value)
    }
}

impl Loss for SsimLoss {
    fn name(&self) -> &'static str {
        "ssim"
    }

    fn eval(&self, pred: ArrayView2<f64>, gt: ArrayView2<f64>) -> Result<LossEval> {
        check_pair(&pred, &gt)?;
        let (ny, nx) = pred.dim();
        self.cfg.validate_for(ny, nx)?;
        let (w, stride) = (self.cfg.window, self.cfg.stride);
        let (c1, c2) = (self.cfg.c1, self.cfg.c2);
        let np = patch_count(ny, nx, w, stride) as f64;
        let m = (w * w) as f64;

        let mut ssim_sum = 0.0;
        let mut grad = Array2::zeros((ny, nx));
        for_each_patch(ny, nx, w, stride, |r, c| {
            let xp = pred.slice(s![r..r + w, c..c + w]);
            let yp = gt.slice(s![r..r + w, c..c + w]);
            let st = PatchStats::from_patches(&xp, &yp);
            let a1 = 2.0 * st.mu_x * st.mu_y + c1;
            let b1 = st.mu_x * st.mu_x + st.mu_y * st.mu_y + c1;
            let a2 = 2.0 * st.cov_xy + c2;
            let b2 = st.var_x + st.var_y + c2;
            let l = a1 / b1;
            let cs = a2 / b2;
            ssim_sum += l * cs;
            // d l / d x_i is constant over the patch.
            let dl = (2.0 * st.mu_y * b1 - a1 * 2.0 * st.mu_x) / (b1 * b1) / m;
            for ii in 0..w {
                for jj in 0..w {
                    let dx = xp[[ii, jj]] - st.mu_x;
                    let dy = yp[[ii, jj]] - st.mu_y;
                    let dcs = (2.0 * dy * b2 - a2 * 2.0 * dx) / (b2 * b2) / m;
                    // Loss is 1 - mean(ssim): negate and average over patches.
                    grad[[r + ii, c + jj]] += -(dl * cs + l * dcs) / np;
                }
            }
        });
        Ok(LossEval { value: 1.0 - ssim_sum / np, grad })
    }
}
