//! Pixelwise mean absolute and mean squared error.

use ndarray::{Array2, ArrayView2};

use super::{check_pair, Loss, LossEval};
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

/// Mean absolute error; gradient sign(pred - gt)/N with sign(0) = 0.
pub struct L1Loss;

impl Loss for L1Loss {
    fn name(&self) -> &'static str {
        "l1"
    }

    fn eval(&self, pred: ArrayView2<f64>, gt: ArrayView2<f64>) -> Result<LossEval> {
        check_pair(&pred, &gt)?;
        let n = pred.len() as f64;
        let mut value = 0.0;
        let mut grad = Array2::zeros(pred.dim());
        for ((i, j), p) in pred.indexed_iter() {
            let d = p - gt[[i, j]];
            value += d.abs();
            grad[[i, j]] = sign(d) / n;
        }
        Ok(LossEval { value: value / n, grad })
    }
}

/// Mean squared error; gradient 2 (pred - gt)/N.
pub struct L2Loss;

impl Loss for L2Loss {
    fn name(&self) -> &'static str {
        "l2"
    }

    fn eval(&self, pred: ArrayView2<f64>, gt: ArrayView2<f64>) -> Result<LossEval> {
        check_pair(&pred, &gt)?;
        let n = pred.len() as f64;
        let mut value = 0.0;
        let mut grad = Array2::zeros(pred.dim());
        for ((i, j), p) in pred.indexed_iter() {
            let d = p - gt[[i, j]];
            value += d * d;
            grad[[i, j]] = 2.0 * d / n;
        }
        Ok(LossEval { value: value / n, grad })
    }
}
