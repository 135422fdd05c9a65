//! Absolute-difference luminance/structure terms and the losses built on
//! them.
//!
//! Unlike the ratio-form SSIM comparisons, both terms measure disagreement
//! directly: they are zero at perfect agreement and grow with the absolute
//! difference, which keeps them stable at extreme pixel values. The
//! structure term vanishes exactly on patch pairs related by a positive
//! linear map (correlation 1), so its numerator is computed against
//! sqrt(var_x * var_y) rather than a product of rounded square roots.

use ndarray::{s, Array2, ArrayView2};

use super::{check_pair, for_each_patch, patch_count, Loss, LossConfig, LossEval, PatchStats};
use super::pixel::L1Loss;
use crate::error::Result;

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Absolute-difference luminance term |mu_X - mu_Y| / (mu_X^2 + mu_Y^2 + c1).
pub fn l_ad(stats: &PatchStats, cfg: &LossConfig) -> f64 {
    (stats.mu_x - stats.mu_y).abs() / (stats.mu_x * stats.mu_x + stats.mu_y * stats.mu_y + cfg.c1)
}

/// Absolute-difference structure term
/// |cov_XY - sigma_X sigma_Y| / (var_X + var_Y + c2).
///
/// Zero exactly when the covariance equals the product of the standard
/// deviations, i.e. when the patches are positively linearly related.
pub fn s_ad(stats: &PatchStats, cfg: &LossConfig) -> f64 {
    (stats.cov_xy - stats.sigma_product()).abs() / (stats.var_x + stats.var_y + cfg.c2)
}

/// Patch-aggregated product of the luminance and structure terms:
/// sum over patches of L_AD * S_AD, divided by N^e (default e = 2).
pub struct SsimAdLoss {
    cfg: LossConfig,
}

impl SsimAdLoss {
    pub fn new(cfg: LossConfig) -> Self {
        SsimAdLoss { cfg }
    }
}

/// Shared forward+backward for the patch product; also used by the fsc loss.
fn eval_ad(cfg: &LossConfig, pred: &ArrayView2<f64>, gt: &ArrayView2<f64>) -> Result<LossEval> {
    check_pair(pred, gt)?;
    let (ny, nx) = pred.dim();
    cfg.validate_for(ny, nx)?;
    let (w, stride) = (cfg.window, cfg.stride);
    let np = patch_count(ny, nx, w, stride) as f64;
    let norm = np.powi(cfg.patch_norm_exponent);
    let m = (w * w) as f64;

    let mut sum = 0.0;
    let mut grad = Array2::zeros((ny, nx));
    for_each_patch(ny, nx, w, stride, |r, c| {
        let xp = pred.slice(s![r..r + w, c..c + w]);
        let yp = gt.slice(s![r..r + w, c..c + w]);
        let st = PatchStats::from_patches(&xp, &yp);

        let v1 = st.mu_x * st.mu_x + st.mu_y * st.mu_y + cfg.c1;
        let u1 = (st.mu_x - st.mu_y).abs();
        let l = u1 / v1;
        let sgn1 = sign(st.mu_x - st.mu_y);
        // d l / d x_i, constant over the patch.
        let dl = (sgn1 * v1 - u1 * 2.0 * st.mu_x) / (v1 * v1) / m;

        let ssq = st.sigma_product();
        let u2 = (st.cov_xy - ssq).abs();
        let v2 = st.var_x + st.var_y + cfg.c2;
        let s_term = u2 / v2;
        let sgn2 = sign(st.cov_xy - ssq);

        sum += l * s_term;

        let sigma_ratio = if ssq > 0.0 { st.var_y / ssq } else { 0.0 };
        for ii in 0..w {
            for jj in 0..w {
                let dx = xp[[ii, jj]] - st.mu_x;
                let dy = yp[[ii, jj]] - st.mu_y;
                // d cov / d x_i = dy/m; d sqrt(vx*vy) / d x_i = vy*dx/(m*ssq).
                let du2 = sgn2 * (dy - sigma_ratio * dx) / m;
                let dv2 = 2.0 * dx / m;
                let ds = (du2 * v2 - u2 * dv2) / (v2 * v2);
                grad[[r + ii, c + jj]] += (dl * s_term + l * ds) / norm;
            }
        }
    });
    Ok(LossEval { value: sum / norm, grad })
}

impl Loss for SsimAdLoss {
    fn name(&self) -> &'static str {
        "ssim_ad"
    }

    fn eval(&self, pred: ArrayView2<f64>, gt: ArrayView2<f64>) -> Result<LossEval> {
        eval_ad(&self.cfg, &pred, &gt)
    }
}

/// Structure-consistency loss: (1 + ssim_ad) * l1.
///
/// The l1 factor carries global pixel information and keeps the loss (and a
/// useful gradient) alive when every patch is structurally perfect, e.g.
/// under a constant offset; the structure factor in turn amplifies the
/// pixel error wherever local structure disagrees. Gradient by the product
/// rule.
pub struct FscLoss {
    cfg: LossConfig,
}

impl FscLoss {
    pub fn new(cfg: LossConfig) -> Self {
        FscLoss { cfg }
    }
}

impl Loss for FscLoss {
    fn name(&self) -> &'static str {
        "fsc"
    }

    fn eval(&self, pred: ArrayView2<f64>, gt: ArrayView2<f64>) -> Result<LossEval> {
        let ad = eval_ad(&self.cfg, &pred, &gt)?;
        let pixel = L1Loss.eval(pred, gt)?;
        let a = 1.0 + ad.value;
        let value = a * pixel.value;
        let grad = &ad.grad * pixel.value + &pixel.grad * a;
        Ok(LossEval { value, grad })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::gradient_check;
    use ndarray::Array2;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn cfg() -> LossConfig {
        LossConfig::default()
    }

    fn stats_of(x: &Array2<f64>, y: &Array2<f64>) -> PatchStats {
        PatchStats::from_patches(&x.view(), &y.view())
    }

    #[test]
    fn l_ad_hand_values() {
        let c = cfg();
        let equal = PatchStats { mu_x: 0.7, mu_y: 0.7, var_x: 1.0, var_y: 1.0, cov_xy: 0.0 };
        assert_eq!(l_ad(&equal, &c), 0.0);
        let unit = PatchStats { mu_x: 1.0, mu_y: 0.0, var_x: 0.0, var_y: 0.0, cov_xy: 0.0 };
        assert!((l_ad(&unit, &c) - 1.0 / 1.0001).abs() < 1e-12);
        let zero = PatchStats { mu_x: 0.0, mu_y: 0.0, var_x: 0.0, var_y: 0.0, cov_xy: 0.0 };
        assert_eq!(l_ad(&zero, &c), 0.0);
    }

    #[test]
    fn s_ad_vanishes_on_positive_linear_maps_exactly() {
        // Dyadic patch values and a power-of-two slope keep every moment
        // exact in binary floating point, so the cancellation is literal.
        let c = cfg();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..100 {
            let x = Array2::from_shape_fn((8, 8), |_| rng.random_range(-8i32..8) as f64);
            let a = [0.5, 1.0, 2.0, 4.0][rng.random_range(0..4)];
            let b = rng.random_range(-8i32..8) as f64 * 0.25;
            let y = x.mapv(|v| a * v + b);
            let st = stats_of(&x, &y);
            assert_eq!(s_ad(&st, &c), 0.0, "a={a} b={b}");
        }
        // Arbitrary real slopes cancel to rounding.
        for _ in 0..100 {
            let x = Array2::from_shape_fn((8, 8), |_| rng.random_range(-1.0..1.0));
            let a: f64 = rng.random_range(0.1..3.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            let y = x.mapv(|v| a * v + b);
            let st = stats_of(&x, &y);
            assert!(s_ad(&st, &c) <= 1e-12);
        }
    }

    #[test]
    fn s_ad_anticorrelated_hand_value() {
        // Y = -X: cov = -var, sigma product = var, so 2 var / (2 var + c2).
        let c = cfg();
        let x = Array2::from_shape_fn((8, 8), |(i, j)| ((i * 8 + j) as f64 * 0.37).sin());
        let y = x.mapv(|v| -v);
        let st = stats_of(&x, &y);
        let var = st.var_x;
        let oracle = 2.0 * var / (2.0 * var + c.c2);
        assert!((s_ad(&st, &c) - oracle).abs() < 1e-12);
        // Constant patches: everything is zero.
        let flat = Array2::from_elem((8, 8), 3.0);
        assert_eq!(s_ad(&stats_of(&flat, &flat), &c), 0.0);
    }

    #[test]
    fn ssim_ad_ignores_uniform_linear_maps() {
        let loss = SsimAdLoss::new(cfg());
        let x = Array2::from_shape_fn((16, 16), |_| {
            let mut h = 0u64;
            h = h.wrapping_mul(6364136223846793005).wrapping_add(1);
            (h >> 33) as f64
        });
        // Dyadic slope: exact zero. The luminance term is nonzero but each
        // patch product carries the zero structure factor.
        let y = x.mapv(|v| 2.0 * v + 0.25);
        let e = loss.eval(y.view(), x.view()).unwrap();
        assert_eq!(e.value, 0.0);
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let x = Array2::from_shape_fn((16, 16), |_| rng.random_range(-1.0..1.0));
        let y = x.mapv(|v| 1.7 * v - 0.3);
        assert!(loss.eval(y.view(), x.view()).unwrap().value <= 1e-12);
    }

    #[test]
    fn fsc_stays_positive_under_constant_shift() {
        // Structure agrees on every patch, so ssim_ad alone is ~0, but the
        // l1 factor keeps the loss strictly positive at |shift|.
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let gt = Array2::from_shape_fn((8, 8), |_| rng.random_range(-1.0..1.0));
        let pred = &gt + 0.5;
        let ad = SsimAdLoss::new(cfg()).eval(pred.view(), gt.view()).unwrap();
        assert!(ad.value <= 1e-12, "structure term should vanish, got {}", ad.value);
        let fsc = FscLoss::new(cfg()).eval(pred.view(), gt.view()).unwrap();
        assert!(fsc.value > 0.4, "fsc {}", fsc.value);
        assert!((fsc.value - 0.5).abs() < 1e-9);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let p = Array2::from_shape_fn((16, 16), |_| rng.random_range(-1.0..1.0));
        let g = Array2::from_shape_fn((16, 16), |_| rng.random_range(-1.0..1.0));
        for loss in [&SsimAdLoss::new(cfg()) as &dyn Loss, &FscLoss::new(cfg())] {
            let rel = gradient_check(loss, &p, &g, 1e-5).unwrap();
            assert!(rel <= 1e-4, "{}: rel err {rel:e}", loss.name());
        }
    }

    #[test]
    fn ad_terms_are_symmetric_in_their_numerators() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((8, 8), |_| rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((8, 8), |_| rng.random_range(-1.0..1.0));
        let a = stats_of(&x, &y);
        let b = stats_of(&y, &x);
        let c = cfg();
        assert!((l_ad(&a, &c) - l_ad(&b, &c)).abs() < 1e-15);
        assert!((s_ad(&a, &c) - s_ad(&b, &c)).abs() < 1e-15);
    }
}
