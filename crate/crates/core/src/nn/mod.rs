//! Minimal differentiable tensor machinery for the generator and discriminator.

pub mod adam;
pub mod layers;
pub mod ops;
pub mod params;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use layers::{BatchNormLayer, BlockCache, ConvBlock, ConvGeometry, ConvLayer, Mode};
pub use ops::{Activation, ConvSpec, DifferentiableOp, PadAmounts, Padding};
pub use params::{ManifestEntry, Param, ParamId, ParamStore};
pub use tensor::Tensor;
