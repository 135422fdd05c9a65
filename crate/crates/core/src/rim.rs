//! Three-channel real/imaginary/magnitude encoding of complex images.
//!
//! The encoding normalizes each frequency component by its largest modulus so
//! every training sample lives in [-1, 1], and carries the scale along so the
//! recovered image can be mapped back to raw amplitudes.

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::sm::ComplexImage;

/// Channel index of the real part.
pub const RIM_REAL: usize = 0;
/// Channel index of the imaginary part.
pub const RIM_IMAG: usize = 1;
/// Channel index of the magnitude.
pub const RIM_MAG: usize = 2;

/// Normalized real/imaginary/magnitude image plus its normalization scale.
#[derive(Debug, Clone, PartialEq)]
pub struct RimImage {
    grid: Grid,
    channels: Array3<f64>,
    scale: f64,
}

impl RimImage {
    /// `channels` has shape (3, ny, nx). The magnitude channel must agree
    /// with sqrt(real^2 + imag^2) to 1e-12 relative and the real/imag
    /// channels must stay within [-1, 1].
    pub fn new(grid: Grid, channels: Array3<f64>, scale: f64) -> Result<Self> {
        let (c, ny, nx) = channels.dim();
        if c != 3 || ny != grid.ny() || nx != grid.nx() {
            return Err(Error::ShapeMismatch(format!(
                "RIM tensor {:?} does not match 3x{}x{}",
                channels.dim(),
                grid.ny(),
                grid.nx()
            )));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidData(format!("scale must be positive and finite, got {scale}")));
        }
        if channels.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("RIM channels contain non-finite entries".into()));
        }
        for i in 0..ny {
            for j in 0..nx {
                let re = channels[[RIM_REAL, i, j]];
                let im = channels[[RIM_IMAG, i, j]];
                let mag = channels[[RIM_MAG, i, j]];
                if re.abs() > 1.0 + 1e-12 || im.abs() > 1.0 + 1e-12 {
                    return Err(Error::InvalidData(format!(
                        "normalized channel exceeds unit range at ({i},{j})"
                    )));
                }
                let expect = re.hypot(im);
                if (mag - expect).abs() > 1e-12 * expect.max(1.0) {
                    return Err(Error::InvalidData(format!(
                        "magnitude channel inconsistent at ({i},{j}): {mag} vs {expect}"
                    )));
                }
            }
        }
        Ok(RimImage { grid, channels, scale })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn channels(&self) -> &Array3<f64> {
        &self.channels
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

/// Encode a complex image as normalized real/imag/magnitude channels.
///
/// The scale is the largest entrywise modulus (1 for an all-zero image).
pub fn rim_encode(img: &ComplexImage) -> Result<RimImage> {
    let max_abs = img.max_abs();
    let scale = if max_abs > 0.0 { max_abs } else { 1.0 };
    let (ny, nx) = (img.grid().ny(), img.grid().nx());
    let mut channels = Array3::zeros((3, ny, nx));
    for i in 0..ny {
        for j in 0..nx {
            let z = img.values()[[i, j]];
            channels[[RIM_REAL, i, j]] = z.re / scale;
            channels[[RIM_IMAG, i, j]] = z.im / scale;
            channels[[RIM_MAG, i, j]] = z.norm() / scale;
        }
    }
    RimImage::new(*img.grid(), channels, scale)
}

/// Rebuild the complex image from the real/imag channels and the scale.
///
/// The magnitude channel is auxiliary guidance only and is ignored here.
pub fn rim_decode(rim: &RimImage) -> Result<ComplexImage> {
    ComplexImage::from_planes(*rim.grid(), rim.channels(), rim.scale())
}
