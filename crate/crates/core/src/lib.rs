//! Adaptive discriminator augmentation.
//!
//! An augmentation pipeline of 18 transforms (pixel blitting, general
//! geometry, color, frequency-band filtering, noise and cutout) applied to
//! every image a GAN discriminator sees, with gradients back to the input
//! image, a controller that adapts the augmentation probability `p` from an
//! overfitting heuristic, and tools to test whether an augmentation
//! operator is invertible (non-leaking).

pub mod cli;
pub mod color;
pub mod controller;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod image;
pub mod leakage;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod wavelet;

pub use controller::{ControllerState, Heuristic, OverfitStats};
pub use error::{AdaError, Result};
pub use image::ImageBatch;
pub use params::AugmentStrength;
pub use pipeline::{augment, augment_replay, augment_vjp, AugmentRecord, Categories, PipelineConfig};
