//! Desk-scale differentiable super-resolution network and trainer.
//!
//! The network follows the shallow-extractor / residual-body / pixel-shuffle
//! pattern: a conv head lifts the 2- or 3-channel low-resolution encoding to
//! feature space, a stack of residual blocks (shifted-window attention by
//! default, plain convolutions as a fast fallback) refines it, and conv +
//! pixel-shuffle stages upsample to the target scale with real/imag output
//! heads. Forward and backward passes are hand-written and verified against
//! finite differences parameter by parameter.

pub mod checkpoint;
pub mod layers;
pub mod net;
pub mod swin;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use layers::{Conv2d, LayerNorm, Linear};
pub use net::{Model, ModelConfig, ModelUpsampler};
pub use train::{dataset_nrmse, train, TrainConfig, TrainReport};
