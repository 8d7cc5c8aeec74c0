//! Parameterized building blocks: convolution, batch normalization and the
//! conv → norm → activation block used by both networks.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ops::{self, Activation, ConvSpec};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::Result;
use crate::scalar::Scalar;

pub const RUNNING_STATS_MOMENTUM: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running averages are refreshed only when asked.
    Train { update_running_stats: bool },
    /// Running averages.
    Inference,
}

/// Shape record of one convolution application, for FLOP accounting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub output: (usize, usize),
}

impl ConvGeometry {
    pub fn macs(&self) -> u64 {
        (self.output.0 * self.output.1 * self.kernel.0 * self.kernel.1 * self.in_channels * self.out_channels) as u64
    }
}

#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub spec: ConvSpec,
    pub in_channels: usize,
    pub out_channels: usize,
    pub extent: (usize, usize),
}

impl ConvLayer {
    /// Kernels drawn from N(0, 2 / fan_in); zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        extent: (usize, usize),
        spec: ConvSpec,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * extent.0 * extent.1;
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
        let n = out_channels * fan_in;
        let values = (0..n).map(|_| T::of(normal.sample(rng))).collect();
        let kernel = store.add(
            format!("{name}.kernel"),
            vec![out_channels, in_channels, extent.0, extent.1],
            values,
            true,
        );
        let bias = store.add(format!("{name}.bias"), vec![out_channels], vec![T::zero(); out_channels], true);
        ConvLayer {
            kernel,
            bias,
            spec,
            in_channels,
            out_channels,
            extent,
        }
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::conv2d(x, &store.tensor(self.kernel), store.value(self.bias), self.spec)
    }

    pub fn backward<T: Scalar>(&self, store: &mut ParamStore<T>, x: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let (gi, gk, gb) = ops::conv2d_backward(x, &store.tensor(self.kernel), self.spec, grad)?;
        store.accumulate_grad(self.kernel, gk.data());
        store.accumulate_grad(self.bias, &gb);
        Ok(gi)
    }

    pub fn geometry(&self, input: (usize, usize)) -> Option<ConvGeometry> {
        let output = self.spec.output_extent(input.0, input.1, self.extent.0, self.extent.1)?;
        Some(ConvGeometry {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: self.extent,
            output,
        })
    }
}

#[derive(Clone, Debug)]
pub struct BatchNormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNormLayer {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        BatchNormLayer {
            gamma: store.add(format!("{name}.gamma"), vec![channels], vec![T::one(); channels], true),
            beta: store.add(format!("{name}.beta"), vec![channels], vec![T::zero(); channels], true),
            running_mean: store.add(format!("{name}.running_mean"), vec![channels], vec![T::zero(); channels], false),
            running_var: store.add(format!("{name}.running_var"), vec![channels], vec![T::one(); channels], false),
        }
    }

    fn stats<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>, mode: Mode) -> (Vec<T>, Vec<T>) {
        match mode {
            Mode::Train { .. } => ops::batch_stats(x),
            Mode::Inference => (
                store.value(self.running_mean).to_vec(),
                store.value(self.running_var).to_vec(),
            ),
        }
    }

    pub fn update_running<T: Scalar>(&self, store: &mut ParamStore<T>, mean: &[T], var: &[T]) {
        let m = T::of(RUNNING_STATS_MOMENTUM);
        let one_m = T::one() - m;
        for (r, &b) in store.get_mut(self.running_mean).value.iter_mut().zip(mean) {
            *r = m * *r + one_m * b;
        }
        for (r, &b) in store.get_mut(self.running_var).value.iter_mut().zip(var) {
            *r = m * *r + one_m * b;
        }
    }
}

/// Activations retained by a [`ConvBlock`] forward pass.
#[derive(Clone, Debug)]
pub struct BlockCache<T> {
    input: Tensor<T>,
    pre_norm: Option<Tensor<T>>,
    pre_act: Tensor<T>,
    batch_stats: Option<(Vec<T>, Vec<T>)>,
    mode: Mode,
}

/// Convolution, optional batch normalization, activation.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv: ConvLayer,
    pub norm: Option<BatchNormLayer>,
    pub act: Activation,
}

impl ConvBlock {
    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BlockCache<T>)> {
        let z = self.conv.forward(store, x)?;
        let (pre_norm, pre_act, batch_stats) = match &self.norm {
            None => (None, z, None),
            Some(bn) => {
                let (mean, var) = bn.stats(store, &z, mode);
                let y = ops::batch_norm_apply(&z, &mean, &var, store.value(bn.gamma), store.value(bn.beta));
                let stats = matches!(mode, Mode::Train { .. }).then_some((mean, var));
                (Some(z), y, stats)
            }
        };
        let out = ops::activation(&pre_act, self.act);
        Ok((
            out,
            BlockCache {
                input: x.clone(),
                pre_norm,
                pre_act,
                batch_stats,
                mode,
            },
        ))
    }

    pub fn commit_running_stats<T: Scalar>(&self, store: &mut ParamStore<T>, cache: &BlockCache<T>) {
        if let (Some(bn), Some((mean, var)), Mode::Train { update_running_stats: true }) =
            (&self.norm, &cache.batch_stats, cache.mode)
        {
            bn.update_running(store, mean, var);
        }
    }

    pub fn backward<T: Scalar>(&self, store: &mut ParamStore<T>, cache: &BlockCache<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let g = ops::activation_backward(&cache.pre_act, self.act, grad)?;
        let g = match (&self.norm, &cache.pre_norm) {
            (Some(bn), Some(z)) => {
                let gamma = store.value(bn.gamma).to_vec();
                match cache.mode {
                    Mode::Train { .. } => {
                        let (gz, dg, db) = ops::batch_norm_backward(z, &gamma, &g)?;
                        store.accumulate_grad(bn.gamma, &dg);
                        store.accumulate_grad(bn.beta, &db);
                        gz
                    }
                    Mode::Inference => {
                        let mean = store.value(bn.running_mean).to_vec();
                        let var = store.value(bn.running_var).to_vec();
                        let eps = T::of(ops::BATCH_NORM_EPS);
                        let c = z.channels();
                        let (mut dg, mut db) = (vec![T::zero(); c], vec![T::zero(); c]);
                        for b in 0..z.batch() {
                            for k in 0..c {
                                let inv = T::one() / (var[k] + eps).sqrt();
                                for (&zv, &gv) in z.plane(b, k).iter().zip(g.plane(b, k)) {
                                    dg[k] += gv * (zv - mean[k]) * inv;
                                    db[k] += gv;
                                }
                            }
                        }
                        store.accumulate_grad(bn.gamma, &dg);
                        store.accumulate_grad(bn.beta, &db);
                        ops::batch_norm_apply_backward(&var, &gamma, &g)
                    }
                }
            }
            _ => g,
        };
        self.conv.backward(store, &cache.input, &g)
    }
}
