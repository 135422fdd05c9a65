//! Spatial sampling grid over a rectangular field of view.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regular pixel grid covering a rectangular field of view.
///
/// Pixel centers sit at `-fov/2 + (i + 0.5) * pitch`, so the position set is
/// symmetric under reflection about the FOV center. Lengths are in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRaw", into = "GridRaw")]
pub struct Grid {
    nx: usize,
    ny: usize,
    fov_x: f64,
    fov_y: f64,
}

#[derive(Serialize, Deserialize)]
struct GridRaw {
    nx: usize,
    ny: usize,
    fov_x: f64,
    fov_y: f64,
}

impl TryFrom<GridRaw> for Grid {
    type Error = Error;
    fn try_from(raw: GridRaw) -> Result<Grid> {
        Grid::new(raw.nx, raw.ny, raw.fov_x, raw.fov_y)
    }
}

impl From<Grid> for GridRaw {
    fn from(g: Grid) -> GridRaw {
        GridRaw { nx: g.nx, ny: g.ny, fov_x: g.fov_x, fov_y: g.fov_y }
    }
}

impl Grid {
    pub fn new(nx: usize, ny: usize, fov_x: f64, fov_y: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Config(format!("grid must be at least 1x1, got {nx}x{ny}")));
        }
        if !(fov_x > 0.0 && fov_x.is_finite() && fov_y > 0.0 && fov_y.is_finite()) {
            return Err(Error::Config(format!("field of view must be positive and finite, got {fov_x}x{fov_y} mm")));
        }
        let g = Grid { nx, ny, fov_x, fov_y };
        if !(g.pitch_x() > 0.0 && g.pitch_x().is_finite() && g.pitch_y() > 0.0 && g.pitch_y().is_finite()) {
            return Err(Error::Config("pixel pitch is not finite and positive".into()));
        }
        Ok(g)
    }

    /// Square grid helper: `n` x `n` pixels over `fov` x `fov` mm.
    pub fn square(n: usize, fov: f64) -> Result<Self> {
        Grid::new(n, n, fov, fov)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    /// Total number of pixels N = nx * ny.
    pub fn n(&self) -> usize {
        self.nx * self.ny
    }

    pub fn fov_x(&self) -> f64 {
        self.fov_x
    }

    pub fn fov_y(&self) -> f64 {
        self.fov_y
    }

    pub fn pitch_x(&self) -> f64 {
        self.fov_x / self.nx as f64
    }

    pub fn pitch_y(&self) -> f64 {
        self.fov_y / self.ny as f64
    }

    /// x coordinate (mm) of the center of pixel column `j`.
    pub fn x_at(&self, j: usize) -> f64 {
        -self.fov_x / 2.0 + (j as f64 + 0.5) * self.pitch_x()
    }

    /// y coordinate (mm) of the center of pixel row `i`.
    pub fn y_at(&self, i: usize) -> f64 {
        -self.fov_y / 2.0 + (i as f64 + 0.5) * self.pitch_y()
    }

    /// Grid with the same FOV and `s`-fold fewer pixels per side.
    pub fn downsampled(&self, s: usize) -> Result<Self> {
        if s == 0 || self.nx % s != 0 || self.ny % s != 0 {
            return Err(Error::ShapeMismatch(format!(
                "grid {}x{} is not divisible by scale {s}",
                self.nx, self.ny
            )));
        }
        Grid::new(self.nx / s, self.ny / s, self.fov_x, self.fov_y)
    }

    /// Grid with the same FOV and `s`-fold more pixels per side.
    pub fn upsampled(&self, s: usize) -> Result<Self> {
        if s == 0 {
            return Err(Error::Config("scale must be positive".into()));
        }
        Grid::new(self.nx * s, self.ny * s, self.fov_x, self.fov_y)
    }
}
