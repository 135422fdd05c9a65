//! Quantitative assessment: nRMSE for matrix recovery, pSNR for images.

use ndarray::Array2;
use num_complex::Complex64;
use serde_json::json;

use crate::error::{Error, Result};
use crate::sm::{ComplexImage, SystemMatrix};

/// Named metric value with an optional per-row breakdown.
///
/// A perfect pSNR (zero residual) is reported as `f64::INFINITY` and
/// serialized as the string `"inf"`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub per_row: Option<Vec<f64>>,
}

impl MetricReport {
    /// One JSON line, non-finite values encoded as strings.
    pub fn to_json_line(&self) -> String {
        let enc = |v: f64| {
            if v.is_finite() {
                json!(v)
            } else if v == f64::INFINITY {
                json!("inf")
            } else if v == f64::NEG_INFINITY {
                json!("-inf")
            } else {
                json!("nan")
            }
        };
        let mut obj = json!({ "name": self.name, "value": enc(self.value) });
        if let Some(rows) = &self.per_row {
            obj["per_row"] = json!(rows.iter().map(|&v| enc(v)).collect::<Vec<_>>());
        }
        obj.to_string()
    }
}

fn frob_diff(pred: &Array2<Complex64>, gt: &Array2<Complex64>) -> (f64, f64) {
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, g) in pred.iter().zip(gt.iter()) {
        num += (p - g).norm_sqr();
        den += g.norm_sqr();
    }
    (num.sqrt(), den.sqrt())
}

/// Frobenius norm of the residual divided by the Frobenius norm of the
/// ground truth, over complex entries. The denominator is always `gt`.
pub fn nrmse(pred: &SystemMatrix, gt: &SystemMatrix) -> Result<MetricReport> {
    if pred.data().dim() != gt.data().dim() {
        return Err(Error::ShapeMismatch(format!(
            "nrmse shapes {:?} vs {:?}",
            pred.data().dim(),
            gt.data().dim()
        )));
    }
    let (num, den) = frob_diff(pred.data(), gt.data());
    if den == 0.0 {
        return Err(Error::UndefinedMetric("nRMSE needs a nonzero ground truth".into()));
    }
    let per_row = (0..gt.k())
        .map(|k| {
            let mut n = 0.0;
            let mut d = 0.0;
            for (p, g) in pred.data().row(k).iter().zip(gt.data().row(k).iter()) {
                n += (p - g).norm_sqr();
                d += g.norm_sqr();
            }
            if d > 0.0 {
                n.sqrt() / d.sqrt()
            } else {
                f64::INFINITY
            }
        })
        .collect();
    Ok(MetricReport { name: "nrmse".into(), value: num / den, per_row: Some(per_row) })
}

/// nRMSE between two complex images.
pub fn nrmse_image(pred: &ComplexImage, gt: &ComplexImage) -> Result<MetricReport> {
    if pred.values().dim() != gt.values().dim() {
        return Err(Error::ShapeMismatch("nrmse image shapes differ".into()));
    }
    let (num, den) = frob_diff(pred.values(), gt.values());
    if den == 0.0 {
        return Err(Error::UndefinedMetric("nRMSE needs a nonzero ground truth".into()));
    }
    Ok(MetricReport { name: "nrmse".into(), value: num / den, per_row: None })
}

/// Peak signal-to-noise ratio of a real image against its reference:
/// 20 log10( sqrt(K) * max|ref| / ||pred - ref||_2 ) with K the pixel count.
pub fn psnr(pred: &Array2<f64>, reference: &Array2<f64>) -> Result<MetricReport> {
    if pred.dim() != reference.dim() {
        return Err(Error::ShapeMismatch(format!("psnr shapes {:?} vs {:?}", pred.dim(), reference.dim())));
    }
    let peak = reference.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::UndefinedMetric("pSNR needs a nonzero reference".into()));
    }
    let k = reference.len() as f64;
    let resid: f64 = pred
        .iter()
        .zip(reference.iter())
        .map(|(p, r)| (p - r) * (p - r))
        .sum::<f64>()
        .sqrt();
    let value = if resid == 0.0 {
        f64::INFINITY
    } else {
        20.0 * (k.sqrt() * peak / resid).log10()
    };
    Ok(MetricReport { name: "psnr".into(), value, per_row: None })
}
