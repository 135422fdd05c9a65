//! Field-free-point Lissajous scanner simulation.
//!
//! Generates ground-truth system matrices by placing an ideal point sample
//! at every grid position, evolving its equilibrium (Langevin) magnetization
//! under the superposition of selection and drive fields, and taking the
//! discrete Fourier coefficients of the induced voltage over one full
//! trajectory period. Receive coils are ideal with unit sensitivity along x
//! and y, so u = S c holds by construction.

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::sm::{ComplexImage, FreqDescriptor, SystemMatrix};

/// Vacuum permeability (T m / A).
pub const MU_0: f64 = 4.0e-7 * std::f64::consts::PI;
/// Boltzmann constant (J / K).
pub const K_B: f64 = 1.380_649e-23;

/// Physics and discretization parameters for system-matrix generation.
///
/// Gradients are in T/m, frequencies in Hz (whole numbers so the Lissajous
/// period is exact), amplitudes in mT, the particle diameter in nm and the
/// field of view in mm. When `amp_drive_mt`/`amp_focus_mt` are absent the
/// amplitudes are derived from the FOV so the trajectory spans it exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub gradient_x: f64,
    pub gradient_y: f64,
    pub f_drive: f64,
    pub f_focus: f64,
    pub amp_drive_mt: Option<f64>,
    pub amp_focus_mt: Option<f64>,
    pub particle_diameter_nm: f64,
    pub grid: Grid,
    pub n_periods: usize,
    pub samples_per_period: usize,
    pub temperature_k: f64,
    pub saturation_magnetization: f64,
    pub quadrature_weight: f64,
    pub bins_per_channel: usize,
    pub mixing_order: usize,
    pub rng_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            gradient_x: 2.5,
            gradient_y: 2.5,
            f_drive: 25_000.0,
            f_focus: 24_750.0,
            amp_drive_mt: None,
            amp_focus_mt: None,
            particle_diameter_nm: 30.0,
            grid: Grid::square(32, 32.0).expect("default grid"),
            n_periods: 1,
            samples_per_period: 1000,
            temperature_k: 300.0,
            saturation_magnetization: 474_000.0,
            quadrature_weight: 1.0,
            bins_per_channel: 200,
            mixing_order: 16,
            rng_seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("gradient_x", self.gradient_x),
            ("gradient_y", self.gradient_y),
            ("f_drive", self.f_drive),
            ("f_focus", self.f_focus),
            ("particle_diameter_nm", self.particle_diameter_nm),
            ("temperature_k", self.temperature_k),
            ("saturation_magnetization", self.saturation_magnetization),
        ];
        for (name, v) in positives {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        for (name, v) in [("amp_drive_mt", self.amp_drive_mt), ("amp_focus_mt", self.amp_focus_mt)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
                }
            }
        }
        if !(self.quadrature_weight.is_finite() && self.quadrature_weight != 0.0) {
            return Err(Error::Config("quadrature_weight must be finite and nonzero".into()));
        }
        if self.f_drive == self.f_focus {
            return Err(Error::Config("drive and focus frequencies must differ".into()));
        }
        if self.f_drive.fract() != 0.0 || self.f_focus.fract() != 0.0 {
            return Err(Error::Config("drive and focus frequencies must be whole Hz".into()));
        }
        if self.n_periods == 0 || self.samples_per_period == 0 {
            return Err(Error::Config("n_periods and samples_per_period must be at least 1".into()));
        }
        if self.bins_per_channel == 0 || self.mixing_order == 0 {
            return Err(Error::Config("bins_per_channel and mixing_order must be at least 1".into()));
        }
        // Nyquist check happens while selecting bins.
        FreqPlan::new(self)?;
        Ok(())
    }

    /// Drive amplitudes in mT, derived from the FOV when not given.
    pub fn amplitudes_mt(&self) -> (f64, f64) {
        let (ax, ay) = drive_amplitudes(self);
        (self.amp_drive_mt.unwrap_or(ax), self.amp_focus_mt.unwrap_or(ay))
    }

    /// Magnetic moment of one particle, (pi/6) * M_s * D^3, in A m^2.
    pub fn particle_moment(&self) -> f64 {
        let d = self.particle_diameter_nm * 1e-9;
        std::f64::consts::PI / 6.0 * self.saturation_magnetization * d * d * d
    }

    /// Repetition period of the Lissajous trajectory, 1 / gcd(f_D, f_E), in s.
    pub fn lissajous_period(&self) -> f64 {
        1.0 / self.f_gcd()
    }

    fn f_gcd(&self) -> f64 {
        gcd_u64(self.f_drive as u64, self.f_focus as u64) as f64
    }
}

fn gcd_u64(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Drive-field amplitudes A_D = FOV_x * G_x / 2 and A_E = FOV_y * G_y / 2.
///
/// With the FOV in mm and the gradient in T/m the product is directly in mT.
pub fn drive_amplitudes(cfg: &SimConfig) -> (f64, f64) {
    (cfg.grid.fov_x() * cfg.gradient_x / 2.0, cfg.grid.fov_y() * cfg.gradient_y / 2.0)
}

/// Field-free-point position (mm) at time `t` (s).
///
/// x(t) = (A_D / G_x) sin(2 pi f_D t), y(t) analogously with the focus
/// frequency; the total field is G * (r - r_ffp(t)).
pub fn ffp_trajectory(cfg: &SimConfig, t: f64) -> (f64, f64) {
    let (amp_x, amp_y) = cfg.amplitudes_mt();
    let x = amp_x / cfg.gradient_x * (2.0 * std::f64::consts::PI * cfg.f_drive * t).sin();
    let y = amp_y / cfg.gradient_y * (2.0 * std::f64::consts::PI * cfg.f_focus * t).sin();
    (x, y)
}

/// Langevin function coth(xi) - 1/xi with L(0) = 0.
pub fn langevin(xi: f64) -> f64 {
    if xi == 0.0 {
        return 0.0;
    }
    if xi.abs() < 1e-4 {
        // Series: xi/3 - xi^3/45 + O(xi^5).
        return xi / 3.0 - xi * xi * xi / 45.0;
    }
    1.0 / xi.tanh() - 1.0 / xi
}

/// L(xi)/xi, smooth through xi = 0 where it equals 1/3.
fn langevin_over_xi(xi: f64) -> f64 {
    if xi.abs() < 1e-4 {
        return 1.0 / 3.0 - xi * xi / 45.0;
    }
    langevin(xi) / xi
}

/// Frequency bookkeeping: samples per full period and the selected DFT bins.
struct FreqPlan {
    /// Samples in one full Lissajous period.
    n_t: usize,
    /// Frequency resolution of the full-period DFT (= gcd of f_D, f_E), Hz.
    f_res: f64,
    /// Selected bin indices, ascending; shared by both receive channels.
    bins: Vec<usize>,
}

impl FreqPlan {
    fn new(cfg: &SimConfig) -> Result<Self> {
        let g = gcd_u64(cfg.f_drive as u64, cfg.f_focus as u64);
        let p_d = (cfg.f_drive as u64 / g) as i64;
        let p_e = (cfg.f_focus as u64 / g) as i64;
        let n_t = cfg.samples_per_period * p_d as usize;
        // Mixing products m*f_D + n*f_E up to the configured order, expressed
        // as multiples of the gcd.
        let order = cfg.mixing_order as i64;
        let mut bins: Vec<usize> = Vec::new();
        for m in 0..=order {
            for n in -order..=order {
                let b = m * p_d + n * p_e;
                if b > 0 && (b as usize) < n_t / 2 {
                    bins.push(b as usize);
                }
            }
        }
        bins.sort_unstable();
        bins.dedup();
        if bins.len() < cfg.bins_per_channel {
            return Err(Error::Config(format!(
                "only {} mixing bins fit below Nyquist ({} requested); increase samples_per_period or lower bins_per_channel",
                bins.len(),
                cfg.bins_per_channel
            )));
        }
        bins.truncate(cfg.bins_per_channel);
        Ok(FreqPlan { n_t, f_res: g as f64, bins })
    }

    fn descriptors(&self) -> Vec<FreqDescriptor> {
        let mut freqs = Vec::with_capacity(2 * self.bins.len());
        for channel in 0..2u8 {
            for &bin in &self.bins {
                freqs.push(FreqDescriptor { bin, freq_hz: bin as f64 * self.f_res, channel });
            }
        }
        freqs
    }
}

/// Per-sample x/y magnetization of a unit point sample at `pos_mm`.
///
/// Runs over `periods` full Lissajous periods. The field is
/// B(r, t) = G * (r - r_ffp(t)) in T; the equilibrium magnetization along
/// axis e is m * L(xi) * B_e / |B| with xi = m |B| / (k_B T), evaluated in
/// the form m^2/(k_B T) * (L(xi)/xi) * B_e, which is smooth through the
/// field-free point.
pub fn simulate_magnetization(
    cfg: &SimConfig,
    pos_mm: (f64, f64),
    periods: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let plan = FreqPlan::new(cfg)?;
    let total = plan.n_t * periods;
    let (amp_x_mt, amp_y_mt) = cfg.amplitudes_mt();
    let moment = cfg.particle_moment();
    let beta = moment / (K_B * cfg.temperature_k);
    let prefac = moment * beta;
    let fs = cfg.samples_per_period as f64 * cfg.f_drive;
    let (x_m, y_m) = (pos_mm.0 * 1e-3, pos_mm.1 * 1e-3);
    let (amp_x_t, amp_y_t) = (amp_x_mt * 1e-3, amp_y_mt * 1e-3);
    let mut mx = Vec::with_capacity(total);
    let mut my = Vec::with_capacity(total);
    for j in 0..total {
        let t = j as f64 / fs;
        let bx = cfg.gradient_x * x_m - amp_x_t * (2.0 * std::f64::consts::PI * cfg.f_drive * t).sin();
        let by = cfg.gradient_y * y_m - amp_y_t * (2.0 * std::f64::consts::PI * cfg.f_focus * t).sin();
        let b = bx.hypot(by);
        let lam = langevin_over_xi(beta * b);
        mx.push(prefac * lam * bx);
        my.push(prefac * lam * by);
    }
    Ok((mx, my))
}

/// Induced voltage time series (arbitrary units) for one receive channel.
///
/// The voltage is -d/dt of the magnetization component along the channel
/// axis, computed by spectral differentiation over the integer number of
/// full periods, so the series is exactly as periodic as the field.
pub fn simulate_time_signal(
    cfg: &SimConfig,
    pos_mm: (f64, f64),
    channel: u8,
    periods: usize,
) -> Result<Vec<f64>> {
    if channel > 1 {
        return Err(Error::IndexOutOfRange(format!("receive channel {channel}, have 2")));
    }
    if periods == 0 {
        return Err(Error::Config("periods must be at least 1".into()));
    }
    let plan = FreqPlan::new(cfg)?;
    let (mx, my) = simulate_magnetization(cfg, pos_mm, periods)?;
    let series = if channel == 0 { mx } else { my };
    let n = series.len();
    let mut buf: Vec<Complex64> = series.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    // Multiply bin k by -i 2 pi f_k with the signed bin frequency, then invert.
    let f_res = plan.f_res / periods as f64;
    for (k, v) in buf.iter_mut().enumerate() {
        let f = if 2 * k <= n { k as f64 } else { k as f64 - n as f64 } * f_res;
        *v *= Complex64::new(0.0, -2.0 * std::f64::consts::PI * f);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    Ok(buf.iter().map(|z| z.re / n as f64).collect())
}

/// Simulate the ground-truth system matrix for the configured scanner.
///
/// Row ordering: channel 0 (x coil) bins ascending, then channel 1. Rows are
/// computed position by position in parallel; the result is bit-identical
/// for a fixed config regardless of worker count.
pub fn simulate_sm(cfg: &SimConfig) -> Result<SystemMatrix> {
    cfg.validate()?;
    let plan = FreqPlan::new(cfg)?;
    let n_t = plan.n_t;
    let grid = cfg.grid;
    let positions: Vec<(f64, f64)> = (0..grid.n())
        .map(|n| {
            let (i, j) = (n / grid.nx(), n % grid.nx());
            (grid.x_at(j), grid.y_at(i))
        })
        .collect();

    let fft = Arc::new(FftPlanner::new().plan_fft_forward(n_t));
    let weight = cfg.quadrature_weight;
    let columns: Vec<(Vec<Complex64>, Vec<Complex64>)> = positions
        .par_iter()
        .map(|&pos| {
            let (mx, my) = simulate_magnetization(cfg, pos, 1).expect("validated config");
            let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
            let mut col = (Vec::with_capacity(plan.bins.len()), Vec::with_capacity(plan.bins.len()));
            for (series, out) in [(&mx, &mut col.0), (&my, &mut col.1)] {
                let mut buf: Vec<Complex64> = series.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                fft.process_with_scratch(&mut buf, &mut scratch);
                for &bin in &plan.bins {
                    let coeff = buf[bin] / n_t as f64;
                    let f = bin as f64 * plan.f_res;
                    out.push(coeff * Complex64::new(0.0, -2.0 * std::f64::consts::PI * f) * weight);
                }
            }
            col
        })
        .collect();

    let k_per_channel = plan.bins.len();
    let mut data = Array2::zeros((2 * k_per_channel, grid.n()));
    for (n, (cx, cy)) in columns.iter().enumerate() {
        for k in 0..k_per_channel {
            data[[k, n]] = cx[k];
            data[[k_per_channel + k, n]] = cy[k];
        }
    }
    SystemMatrix::new(grid, plan.descriptors(), data, None)
}

/// Nonnegative particle-concentration map over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    grid: Grid,
    concentration: Array2<f64>,
}

impl Phantom {
    pub fn new(grid: Grid, concentration: Array2<f64>) -> Result<Self> {
        if concentration.nrows() != grid.ny() || concentration.ncols() != grid.nx() {
            return Err(Error::ShapeMismatch(format!(
                "concentration {}x{} does not match grid {}x{}",
                concentration.nrows(),
                concentration.ncols(),
                grid.ny(),
                grid.nx()
            )));
        }
        if concentration.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidData("concentration must be finite and nonnegative".into()));
        }
        Ok(Phantom { grid, concentration })
    }

    pub fn zeros(grid: Grid) -> Self {
        Phantom { grid, concentration: Array2::zeros((grid.ny(), grid.nx())) }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn concentration(&self) -> &Array2<f64> {
        &self.concentration
    }

    /// Row-major flattening matching the system-matrix column order.
    pub fn flatten(&self) -> Vec<f64> {
        self.concentration.iter().copied().collect()
    }
}

/// Complex voltage coefficients paired with their frequency descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageSpectrum {
    pub coefficients: Vec<Complex64>,
    pub freqs: Vec<FreqDescriptor>,
}

impl VoltageSpectrum {
    pub fn new(coefficients: Vec<Complex64>, freqs: Vec<FreqDescriptor>) -> Result<Self> {
        if coefficients.len() != freqs.len() {
            return Err(Error::ShapeMismatch("coefficient/descriptor length mismatch".into()));
        }
        if coefficients.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidData("voltage spectrum contains non-finite entries".into()));
        }
        Ok(VoltageSpectrum { coefficients, freqs })
    }
}

/// Voltage spectrum of a phantom: u = S c.
pub fn simulate_voltage(sm: &SystemMatrix, ph: &Phantom) -> Result<VoltageSpectrum> {
    if sm.grid() != ph.grid() {
        return Err(Error::ShapeMismatch("system matrix and phantom grids differ".into()));
    }
    let c = ph.flatten();
    let coefficients = sm
        .data()
        .rows()
        .into_iter()
        .map(|row| row.iter().zip(&c).map(|(s, &cn)| s * cn).sum())
        .collect();
    VoltageSpectrum::new(coefficients, sm.freqs().to_vec())
}

/// Add complex Gaussian calibration noise at the given SNR (dB) per row.
///
/// The per-entry noise variance of row k is chosen so that the expected
/// ratio of row signal power to noise power is `snr_db`. Rows that are all
/// zero are left untouched. Deterministic for a fixed seed.
pub fn add_noise(sm: &SystemMatrix, snr_db: f64, seed: u64) -> Result<SystemMatrix> {
    if !snr_db.is_finite() {
        return Err(Error::Config(format!("snr_db must be finite, got {snr_db}")));
    }
    if sm.data().iter().all(|z| z.norm_sqr() == 0.0) {
        return Err(Error::InvalidData("SNR is undefined for an all-zero matrix".into()));
    }
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    let snr_lin = 10f64.powf(snr_db / 10.0);
    let mut data = sm.data().clone();
    let mut row_snr = Vec::with_capacity(sm.k());
    for mut row in data.rows_mut() {
        let power: f64 = row.iter().map(|z| z.norm_sqr()).sum::<f64>() / row.len() as f64;
        row_snr.push(snr_lin);
        if power == 0.0 {
            continue;
        }
        // Complex variance sigma^2 split evenly between re and im.
        let sigma = (power / snr_lin / 2.0).sqrt();
        for z in row.iter_mut() {
            let n_re: f64 = normal.sample(&mut rng);
            let n_im: f64 = normal.sample(&mut rng);
            *z += Complex64::new(sigma * n_re, sigma * n_im);
        }
    }
    SystemMatrix::new(*sm.grid(), sm.freqs().to_vec(), data, Some(row_snr))
}

/// Convenience: one frequency component of the simulated matrix as an image.
pub fn component_image(sm: &SystemMatrix, k: usize) -> Result<ComplexImage> {
    sm.row_image(k)
}
