//! Networks: the encoder-decoder generator with skip connections, the
//! patch discriminator, and a single 1x1 convolution used as a linear
//! baseline. All of them share the [`Network`] interface used by training.

mod discriminator;
mod generator;
mod linear;

pub use discriminator::{Discriminator, DiscriminatorCache, DiscriminatorConfig};
pub use generator::{Generator, GeneratorCache, GeneratorConfig, OutputActivation, HEAD_BIAS_INIT};
pub use linear::LinearConvModel;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ConvGeometry, Mode, ParamStore, Tensor};
use crate::scalar::Scalar;

pub trait Network<T: Scalar> {
    type Cache;

    fn params(&self) -> &ParamStore<T>;

    fn params_mut(&mut self) -> &mut ParamStore<T>;

    /// Spatial divisor the input extent must satisfy.
    fn divisor(&self) -> usize;

    fn forward_with_cache(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Self::Cache)>;

    /// Accumulates parameter gradients and returns the gradient with respect
    /// to the input.
    fn backward(&mut self, cache: &Self::Cache, grad_output: &Tensor<T>) -> Result<Tensor<T>>;

    /// Folds the batch statistics recorded in `cache` into the running averages.
    fn commit_running_stats(&mut self, cache: &Self::Cache);

    /// Every convolution applied to an input of `extent`, in execution order.
    fn conv_geometry(&self, extent: (usize, usize)) -> Vec<ConvGeometry>;

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_with_cache(x, Mode::Inference)?.0)
    }

    fn check_extent(&self, x: &Tensor<T>) -> Result<()> {
        let d = self.divisor();
        if x.height() % d != 0 || x.width() % d != 0 {
            return Err(Error::IndivisibleExtent {
                height: x.height(),
                width: x.width(),
                divisor: d,
            });
        }
        Ok(())
    }
}

/// Exact scalar parameter count, including biases and normalization
/// parameters and running statistics.
pub fn count_params<T: Scalar, N: Network<T>>(model: &N) -> usize {
    model.params().scalar_count()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub parameter_count: usize,
    /// Multiply-accumulates over all convolutions for one input.
    pub macs: u64,
    /// `2 * macs`; pooling, normalization and activations are not counted.
    pub flops: u64,
}

pub fn estimate_flops<T: Scalar, N: Network<T>>(model: &N, extent: (usize, usize)) -> ModelSummary {
    let macs = model.conv_geometry(extent).iter().map(ConvGeometry::macs).sum();
    ModelSummary {
        parameter_count: count_params(model),
        macs,
        flops: 2 * macs,
    }
}
