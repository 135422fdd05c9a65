//! System matrices and frequency-component images.
//!
//! A system matrix maps a spatial particle-concentration vector to the
//! complex Fourier coefficients of the received voltage signal. Each row is
//! the spatial response pattern of one frequency component and can be
//! reshaped onto the grid as a square image.

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Integer ratio between high- and low-resolution grid sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct ScaleFactor(u32);

impl ScaleFactor {
    pub const ALLOWED: [u32; 5] = [1, 2, 4, 8, 16];

    pub fn new(value: u32) -> Result<Self> {
        if Self::ALLOWED.contains(&value) {
            Ok(ScaleFactor(value))
        } else {
            Err(Error::Config(format!("scale factor must be one of {:?}, got {value}", Self::ALLOWED)))
        }
    }

    pub fn value(&self) -> usize {
        self.0 as usize
    }
}

impl Default for ScaleFactor {
    fn default() -> Self {
        ScaleFactor(4)
    }
}

impl TryFrom<u32> for ScaleFactor {
    type Error = Error;
    fn try_from(v: u32) -> Result<Self> {
        ScaleFactor::new(v)
    }
}

impl From<ScaleFactor> for u32 {
    fn from(s: ScaleFactor) -> u32 {
        s.0
    }
}

/// Identity of one system-matrix row: DFT bin, physical frequency and
/// receive channel (0 = x coil, 1 = y coil).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreqDescriptor {
    pub bin: usize,
    pub freq_hz: f64,
    pub channel: u8,
}

/// Complex-valued image of one frequency component over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage {
    grid: Grid,
    values: Array2<Complex64>,
}

impl ComplexImage {
    /// `values` has shape (ny, nx); all entries must be finite.
    pub fn new(grid: Grid, values: Array2<Complex64>) -> Result<Self> {
        if values.nrows() != grid.ny() || values.ncols() != grid.nx() {
            return Err(Error::ShapeMismatch(format!(
                "image is {}x{} but grid is {}x{}",
                values.nrows(),
                values.ncols(),
                grid.ny(),
                grid.nx()
            )));
        }
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidData("image contains non-finite entries".into()));
        }
        Ok(ComplexImage { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        let values = Array2::zeros((grid.ny(), grid.nx()));
        ComplexImage { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &Array2<Complex64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<Complex64> {
        self.values
    }

    /// Largest entrywise modulus.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Entrywise modulus as a real image.
    pub fn magnitude(&self) -> Array2<f64> {
        self.values.mapv(|z| z.norm())
    }

    /// Real and imaginary parts stacked as a (2, ny, nx) tensor.
    pub fn to_planes(&self) -> Array3<f64> {
        let (ny, nx) = self.values.dim();
        let mut out = Array3::zeros((2, ny, nx));
        for i in 0..ny {
            for j in 0..nx {
                out[[0, i, j]] = self.values[[i, j]].re;
                out[[1, i, j]] = self.values[[i, j]].im;
            }
        }
        out
    }

    /// Inverse of [`to_planes`]: build an image from real/imag planes scaled
    /// by `scale`.
    pub fn from_planes(grid: Grid, planes: &Array3<f64>, scale: f64) -> Result<Self> {
        if planes.dim().0 < 2 || planes.dim().1 != grid.ny() || planes.dim().2 != grid.nx() {
            return Err(Error::ShapeMismatch(format!(
                "plane tensor {:?} does not match grid {}x{}",
                planes.dim(),
                grid.ny(),
                grid.nx()
            )));
        }
        let values = Array2::from_shape_fn((grid.ny(), grid.nx()), |(i, j)| {
            Complex64::new(planes[[0, i, j]] * scale, planes[[1, i, j]] * scale)
        });
        ComplexImage::new(grid, values)
    }
}

/// Take every `s`-th pixel starting at the top-left corner.
///
/// Output pixel (i, j) is input pixel (s*i, s*j); the FOV is unchanged.
pub fn downsample(img: &ComplexImage, s: ScaleFactor) -> Result<ComplexImage> {
    let s = s.value();
    let lr_grid = img.grid().downsampled(s)?;
    let values = Array2::from_shape_fn((lr_grid.ny(), lr_grid.nx()), |(i, j)| {
        img.values()[[s * i, s * j]]
    });
    ComplexImage::new(lr_grid, values)
}

/// Complex K x N matrix of frequency responses over a spatial grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrix {
    grid: Grid,
    freqs: Vec<FreqDescriptor>,
    data: Array2<Complex64>,
    row_snr: Option<Vec<f64>>,
}

impl SystemMatrix {
    pub fn new(
        grid: Grid,
        freqs: Vec<FreqDescriptor>,
        data: Array2<Complex64>,
        row_snr: Option<Vec<f64>>,
    ) -> Result<Self> {
        if data.nrows() != freqs.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} data rows but {} frequency descriptors",
                data.nrows(),
                freqs.len()
            )));
        }
        if data.ncols() != grid.n() {
            return Err(Error::ShapeMismatch(format!(
                "{} data columns but grid has {} pixels",
                data.ncols(),
                grid.n()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidData("system matrix contains non-finite entries".into()));
        }
        if let Some(snr) = &row_snr {
            if snr.len() != freqs.len() {
                return Err(Error::ShapeMismatch("row_snr length differs from row count".into()));
            }
            if snr.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidData("row_snr entries must be finite and nonnegative".into()));
            }
        }
        Ok(SystemMatrix { grid, freqs, data, row_snr })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn freqs(&self) -> &[FreqDescriptor] {
        &self.freqs
    }

    /// Number of frequency components (rows).
    pub fn k(&self) -> usize {
        self.freqs.len()
    }

    /// Number of spatial positions (columns).
    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn data(&self) -> &Array2<Complex64> {
        &self.data
    }

    pub fn row_snr(&self) -> Option<&[f64]> {
        self.row_snr.as_deref()
    }

    /// Reshape row `k` onto the grid, row-major.
    pub fn row_image(&self, k: usize) -> Result<ComplexImage> {
        if k >= self.k() {
            return Err(Error::IndexOutOfRange(format!(
                "row {k} requested from a {}-row matrix",
                self.k()
            )));
        }
        let row = self.data.row(k);
        let values =
            Array2::from_shape_fn((self.grid.ny(), self.grid.nx()), |(i, j)| row[i * self.grid.nx() + j]);
        ComplexImage::new(self.grid, values)
    }

    /// Build a matrix from per-row images (inverse of [`row_image`]).
    pub fn from_row_images(
        grid: Grid,
        freqs: Vec<FreqDescriptor>,
        images: &[ComplexImage],
        row_snr: Option<Vec<f64>>,
    ) -> Result<Self> {
        if images.len() != freqs.len() {
            return Err(Error::ShapeMismatch("image count differs from descriptor count".into()));
        }
        let mut data = Array2::zeros((images.len(), grid.n()));
        for (k, img) in images.iter().enumerate() {
            if img.grid() != &grid {
                return Err(Error::ShapeMismatch(format!("row {k} image grid differs from matrix grid")));
            }
            for i in 0..grid.ny() {
                for j in 0..grid.nx() {
                    data[[k, i * grid.nx() + j]] = img.values()[[i, j]];
                }
            }
        }
        SystemMatrix::new(grid, freqs, data, row_snr)
    }

    /// Stride-`s` spatial downsampling of every row.
    pub fn downsample(&self, s: ScaleFactor) -> Result<SystemMatrix> {
        let lr_grid = self.grid.downsampled(s.value())?;
        let mut images = Vec::with_capacity(self.k());
        for k in 0..self.k() {
            images.push(downsample(&self.row_image(k)?, s)?);
        }
        SystemMatrix::from_row_images(lr_grid, self.freqs.clone(), &images, self.row_snr.clone())
    }

    /// Restrict the matrix to the given row indices (in the given order).
    pub fn select_rows(&self, rows: &[usize]) -> Result<SystemMatrix> {
        let mut freqs = Vec::with_capacity(rows.len());
        let mut data = Array2::zeros((rows.len(), self.n()));
        for (out_k, &k) in rows.iter().enumerate() {
            if k >= self.k() {
                return Err(Error::IndexOutOfRange(format!("row {k} of {}", self.k())));
            }
            freqs.push(self.freqs[k]);
            data.row_mut(out_k).assign(&self.data.row(k));
        }
        let row_snr = self.row_snr.as_ref().map(|s| rows.iter().map(|&k| s[k]).collect());
        SystemMatrix::new(self.grid, freqs, data, row_snr)
    }
}
