//! Classical recovery strategies behind a common upsampler interface.
//!
//! Every method (and the learned model in [`crate::model`]) implements
//! [`Upsampler`], so matrix-level recovery and the evaluation pipeline are
//! agnostic to how a row is upsampled. Baselines are selected by name
//! through [`create_baseline`].

mod bicubic;
mod cs;

pub use bicubic::{bicubic_upsample, strided_bicubic, Bicubic, StridedBicubic};
pub use cs::{cs_recover, dct2, idct2, soft_threshold, CsConfig, CsRecovery, CsUpsampler};

use rayon::prelude::*;

use crate::error::Result;
use crate::sm::{ComplexImage, ScaleFactor, SystemMatrix};

/// A per-image recovery strategy: low-resolution in, high-resolution out.
pub trait Upsampler: Send + Sync {
    fn name(&self) -> &'static str;
    fn upsample(&self, img: &ComplexImage, s: ScaleFactor) -> Result<ComplexImage>;
}

/// Names accepted by [`create_baseline`].
pub const BASELINE_NAMES: [&str; 3] = ["bicubic", "strided", "cs"];

/// Build a baseline upsampler by registry name.
pub fn create_baseline(name: &str, cs_cfg: &CsConfig) -> Result<Box<dyn Upsampler>> {
    match name {
        "bicubic" => Ok(Box::new(Bicubic)),
        "strided" => Ok(Box::new(StridedBicubic)),
        "cs" => Ok(Box::new(CsUpsampler::new(cs_cfg.clone()))),
        other => Err(crate::error::Error::Config(format!(
            "unknown baseline '{other}', expected one of {BASELINE_NAMES:?}"
        ))),
    }
}

/// Apply an upsampler to every row of a low-resolution matrix.
///
/// Rows are independent and processed in parallel; output ordering matches
/// the input so results are deterministic.
pub fn recover_matrix(ups: &dyn Upsampler, sm_lr: &SystemMatrix, s: ScaleFactor) -> Result<SystemMatrix> {
    let hr_grid = sm_lr.grid().upsampled(s.value())?;
    let images: Result<Vec<ComplexImage>> = (0..sm_lr.k())
        .into_par_iter()
        .map(|k| ups.upsample(&sm_lr.row_image(k)?, s))
        .collect();
    SystemMatrix::from_row_images(hr_grid, sm_lr.freqs().to_vec(), &images?, sm_lr.row_snr().map(|v| v.to_vec()))
}
