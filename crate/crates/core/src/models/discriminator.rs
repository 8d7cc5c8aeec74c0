use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Network;
use crate::error::{Error, Result};
use crate::nn::{Activation, BatchNormLayer, BlockCache, ConvBlock, ConvGeometry, ConvLayer, ConvSpec, Mode, PadAmounts, Padding, ParamStore, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub strided_blocks: usize,
    pub base_channels: usize,
    pub kernel_extent: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            strided_blocks: 3,
            base_channels: 16,
            kernel_extent: 4,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.strided_blocks == 0 {
            problems.push("discriminator.strided_blocks must be >= 1".to_string());
        }
        if self.base_channels == 0 {
            problems.push("discriminator.base_channels must be >= 1".to_string());
        }
        if self.kernel_extent == 0 {
            problems.push("discriminator.kernel_extent must be >= 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }

    pub fn channels(&self, block: usize) -> usize {
        self.base_channels << block
    }
}

/// Patch discriminator: stride-2 conv blocks with leaky ReLU (batch norm on
/// all but the first), then a stride-1 conv head producing one linear score
/// per receptive-field patch.
#[derive(Clone, Debug)]
pub struct Discriminator<T> {
    config: DiscriminatorConfig,
    params: ParamStore<T>,
    blocks: Vec<ConvBlock>,
    head: ConvLayer,
}

#[derive(Clone, Debug)]
pub struct DiscriminatorCache<T> {
    blocks: Vec<BlockCache<T>>,
    head_input: Tensor<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let k = config.kernel_extent;
        let mut blocks = Vec::with_capacity(config.strided_blocks);
        let mut in_c = 1;
        for b in 0..config.strided_blocks {
            let out_c = config.channels(b);
            let conv = ConvLayer::new(
                &mut params,
                &format!("block{b}.conv"),
                in_c,
                out_c,
                (k, k),
                ConvSpec {
                    stride: 2,
                    padding: Padding::Zero,
                },
                &mut rng,
            );
            let norm = (b > 0).then(|| BatchNormLayer::new(&mut params, &format!("block{b}.bn"), out_c));
            blocks.push(ConvBlock {
                conv,
                norm,
                act: Activation::LEAKY,
            });
            in_c = out_c;
        }
        let head = ConvLayer::new(&mut params, "head", in_c, 1, (k, k), ConvSpec::same(Padding::Zero), &mut rng);
        Ok(Discriminator {
            config,
            params,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    /// Input rows and columns (half-open, unclipped) that can influence the
    /// patch score at `(row, col)`.
    pub fn receptive_field(&self, row: usize, col: usize) -> ((isize, isize), (isize, isize)) {
        let k = self.config.kernel_extent;
        let pad = PadAmounts::same(k, k);
        // Walk from the head back to the input.
        let mut layers: Vec<(usize, usize)> = vec![(1, pad.top)];
        layers.extend(std::iter::repeat((2, pad.top)).take(self.blocks.len()));
        let (mut r0, mut r1) = (row as isize, row as isize + 1);
        let (mut c0, mut c1) = (col as isize, col as isize + 1);
        for (stride, p) in layers {
            let (s, p, k) = (stride as isize, p as isize, k as isize);
            r0 = r0 * s - p;
            r1 = (r1 - 1) * s - p + k;
            c0 = c0 * s - p;
            c1 = (c1 - 1) * s - p + k;
        }
        ((r0, r1), (c0, c1))
    }
}

impl<T: Scalar> Network<T> for Discriminator<T> {
    type Cache = DiscriminatorCache<T>;

    fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn divisor(&self) -> usize {
        1 << self.config.strided_blocks
    }

    fn forward_with_cache(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, DiscriminatorCache<T>)> {
        self.check_extent(x)?;
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut h = x.clone();
        for blk in &self.blocks {
            let (out, c) = blk.forward(&self.params, &h, mode)?;
            caches.push(c);
            h = out;
        }
        let out = self.head.forward(&self.params, &h)?;
        Ok((
            out,
            DiscriminatorCache {
                blocks: caches,
                head_input: h,
            },
        ))
    }

    fn backward(&mut self, cache: &DiscriminatorCache<T>, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = self.head.backward(&mut self.params, &cache.head_input, grad_output)?;
        for (blk, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            g = blk.backward(&mut self.params, c, &g)?;
        }
        Ok(g)
    }

    fn commit_running_stats(&mut self, cache: &DiscriminatorCache<T>) {
        for (blk, c) in self.blocks.iter().zip(&cache.blocks) {
            blk.commit_running_stats(&mut self.params, c);
        }
    }

    fn conv_geometry(&self, extent: (usize, usize)) -> Vec<ConvGeometry> {
        let mut out = Vec::new();
        let mut size = extent;
        for blk in &self.blocks {
            if let Some(g) = blk.conv.geometry(size) {
                size = g.output;
                out.push(g);
            }
        }
        out.extend(self.head.geometry(size));
        out
    }
}
