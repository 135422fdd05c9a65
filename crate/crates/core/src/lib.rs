//! System-matrix super-resolution toolkit for magnetic particle imaging.
//!
//! The crate covers the full desk-scale experiment loop:
//!
//! * [`sim`] — field-free-point Lissajous scanner simulation producing
//!   ground-truth system matrices, phantom voltages and calibration noise.
//! * [`sm`] / [`rim`] — system-matrix domain types, frequency-component
//!   images, real/imag/magnitude encoding and stride downsampling.
//! * [`loss`] — the training-loss family (l1, l2, ssim, ssim_ad, fsc), each
//!   returning its value together with the analytic gradient, selectable by
//!   name through a registry.
//! * [`model`] — a small differentiable super-resolution network (shifted
//!   window attention or convolutional residual blocks, pixel-shuffle
//!   upsampling) with a hand-written backward pass and an AdamW trainer.
//! * [`baseline`] — classical recovery strategies (bicubic, strided bicubic,
//!   compressed sensing) behind the same upsampler interface as the model.
//! * [`metric`] — nRMSE and pSNR exactly as used in the reports.
//! * [`recon`] — regularized Kaczmarz image reconstruction and phantoms.
//! * [`io`] — binary system-matrix files, dataset manifests, experiment
//!   configuration and report serialization.

pub mod baseline;
pub mod dataset;
pub mod error;
pub mod grid;
pub mod io;
pub mod loss;
pub mod metric;
pub mod model;
pub mod recon;
pub mod rim;
pub mod sim;
pub mod sm;

pub use error::{Error, Result};
pub use grid::Grid;
pub use rim::{rim_decode, rim_encode, RimImage};
pub use sm::{downsample, ComplexImage, FreqDescriptor, ScaleFactor, SystemMatrix};
