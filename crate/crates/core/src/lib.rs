//! Learning to reproduce an opaque image post-processing chain.
//!
//! Two regimes are supported: supervised training on paired before/after
//! frames ("gray-box"), and cycle-consistent adversarial training on unpaired
//! frame groups ("black-box"). Around them sit windowed SSIM metrics, a
//! synthetic speckle corpus with a fixed reference post-processor, and
//! evaluation and benchmark reporting.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod image;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use image::Image;
pub use scalar::Scalar;

pub type Image32 = Image<f32>;
pub type Image64 = Image<f64>;
pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
