use rand::Rng;

use super::Network;
use crate::error::Result;
use crate::nn::{ConvGeometry, ConvLayer, ConvSpec, Mode, Padding, ParamStore, Tensor};
use crate::scalar::Scalar;

/// One convolution with no activation; with a 1x1 kernel it is a per-pixel
/// affine map, which gives training a closed-form target.
#[derive(Clone, Debug)]
pub struct LinearConvModel<T> {
    params: ParamStore<T>,
    conv: ConvLayer,
}

impl<T: Scalar> LinearConvModel<T> {
    pub fn new<R: Rng>(in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        Self::with_extent(in_channels, out_channels, (1, 1), rng)
    }

    pub fn with_extent<R: Rng>(in_channels: usize, out_channels: usize, extent: (usize, usize), rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        let conv = ConvLayer::new(
            &mut params,
            "conv",
            in_channels,
            out_channels,
            extent,
            ConvSpec::same(Padding::Zero),
            rng,
        );
        LinearConvModel { params, conv }
    }

    /// `(kernel, bias)` values.
    pub fn weights(&self) -> (&[T], &[T]) {
        (self.params.value(self.conv.kernel), self.params.value(self.conv.bias))
    }
}

impl<T: Scalar> Network<T> for LinearConvModel<T> {
    type Cache = Tensor<T>;

    fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn divisor(&self) -> usize {
        1
    }

    fn forward_with_cache(&self, x: &Tensor<T>, _mode: Mode) -> Result<(Tensor<T>, Tensor<T>)> {
        Ok((self.conv.forward(&self.params, x)?, x.clone()))
    }

    fn backward(&mut self, cache: &Tensor<T>, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        self.conv.backward(&mut self.params, cache, grad_output)
    }

    fn commit_running_stats(&mut self, _cache: &Tensor<T>) {}

    fn conv_geometry(&self, extent: (usize, usize)) -> Vec<ConvGeometry> {
        self.conv.geometry(extent).into_iter().collect()
    }
}
