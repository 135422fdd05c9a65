//! Training pairs and frequency-component splits.
//!
//! Each sample pairs the normalized low-resolution encoding of one system
//! matrix row with its high-resolution real/imag target, normalized by the
//! same scale (the only one known at inference time). Splits partition the
//! frequency components disjointly into train/val/test.

use ndarray::{s, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::rim::rim_encode;
use crate::sm::{downsample, ScaleFactor, SystemMatrix};

/// Disjoint frequency-component index sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    /// Stratified assignment by row index: rows with index % modulus equal
    /// to the residues go to val/test, the rest to train. Interleaving keeps
    /// low- and high-frequency components in every split.
    pub fn by_stride(k: usize, modulus: usize, val_residue: usize, test_residue: usize) -> Result<Splits> {
        if modulus < 3 || val_residue >= modulus || test_residue >= modulus || val_residue == test_residue {
            return Err(Error::Config(format!(
                "bad split rule: modulus {modulus}, val {val_residue}, test {test_residue}"
            )));
        }
        let mut s = Splits { train: vec![], val: vec![], test: vec![] };
        for i in 0..k {
            if i % modulus == val_residue {
                s.val.push(i);
            } else if i % modulus == test_residue {
                s.test.push(i);
            } else {
                s.train.push(i);
            }
        }
        s.validate(k)?;
        Ok(s)
    }

    /// Disjointness and range checks.
    pub fn validate(&self, k: usize) -> Result<()> {
        let mut seen = vec![false; k];
        for (name, set) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for &i in set {
                if i >= k {
                    return Err(Error::Config(format!("{name} split references row {i} of {k}")));
                }
                if seen[i] {
                    return Err(Error::Config(format!("row {i} appears in more than one split")));
                }
                seen[i] = true;
            }
        }
        if self.train.is_empty() {
            return Err(Error::Config("train split is empty".into()));
        }
        Ok(())
    }
}

/// One (input, target) pair. The target is the high-resolution real/imag
/// pair divided by the low-resolution normalization scale.
#[derive(Debug, Clone)]
pub struct SrSample {
    pub row: usize,
    /// (3, h, w) with the magnitude channel, (2, h, w) without.
    pub input: Array3<f64>,
    /// (2, h*s, w*s), normalized.
    pub target: Array3<f64>,
    /// Normalization scale of the low-resolution input.
    pub scale: f64,
}

/// All rows of one matrix prepared for super-resolution training.
#[derive(Debug, Clone)]
pub struct SrDataset {
    pub scale: ScaleFactor,
    pub rim_enabled: bool,
    pub lr_grid: Grid,
    pub hr_grid: Grid,
    pub samples: Vec<SrSample>,
    pub splits: Splits,
}

/// Build training pairs by stride-downsampling every row of the
/// high-resolution matrix.
pub fn build_dataset(
    sm_hr: &SystemMatrix,
    scale: ScaleFactor,
    rim_enabled: bool,
    splits: Splits,
) -> Result<SrDataset> {
    splits.validate(sm_hr.k())?;
    let hr_grid = *sm_hr.grid();
    let lr_grid = hr_grid.downsampled(scale.value())?;
    let mut samples = Vec::with_capacity(sm_hr.k());
    for row in 0..sm_hr.k() {
        let hr_img = sm_hr.row_image(row)?;
        let lr_img = downsample(&hr_img, scale)?;
        let rim = rim_encode(&lr_img)?;
        let input = if rim_enabled {
            rim.channels().clone()
        } else {
            rim.channels().slice(s![0..2, .., ..]).to_owned()
        };
        let planes = hr_img.to_planes();
        let target = planes.mapv(|v| v / rim.scale());
        samples.push(SrSample { row, input, target, scale: rim.scale() });
    }
    Ok(SrDataset { scale, rim_enabled, lr_grid, hr_grid, samples, splits })
}
