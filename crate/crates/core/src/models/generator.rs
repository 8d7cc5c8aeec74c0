use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Network;
use crate::error::{Error, Result};
use crate::nn::ops;
use crate::nn::{Activation, BatchNormLayer, BlockCache, ConvBlock, ConvGeometry, ConvLayer, ConvSpec, Mode, Padding, ParamStore, Tensor};
use crate::scalar::Scalar;

/// Initial value of the output bias.
pub const HEAD_BIAS_INIT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Linear,
    /// Clamp to `[0, 1]`; gradients vanish outside the range.
    Clamped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub levels: usize,
    pub channels_per_level: Vec<usize>,
    /// `(axial, lateral)` kernel extent.
    pub kernel_extent: (usize, usize),
    pub output_activation: OutputActivation,
    #[serde(default = "default_true")]
    pub batch_norm: bool,
}

fn default_true() -> bool {
    true
}

impl GeneratorConfig {
    /// Four levels of 16 channels with 3x3 kernels.
    pub fn small() -> Self {
        GeneratorConfig {
            levels: 4,
            channels_per_level: vec![16; 4],
            kernel_extent: (3, 3),
            output_activation: OutputActivation::Linear,
            batch_norm: true,
        }
    }

    /// As [`GeneratorConfig::small`] with 7x3 kernels (7 axial by 3 lateral).
    pub fn mimic() -> Self {
        GeneratorConfig {
            kernel_extent: (7, 3),
            ..Self::small()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.levels == 0 {
            problems.push("generator.levels must be >= 1".to_string());
        }
        if self.channels_per_level.len() != self.levels {
            problems.push(format!(
                "generator.channels_per_level has {} entries for {} levels",
                self.channels_per_level.len(),
                self.levels
            ));
        }
        if self.channels_per_level.iter().any(|&c| c == 0) {
            problems.push("generator channel counts must be >= 1".to_string());
        }
        let (kh, kw) = self.kernel_extent;
        if kh == 0 || kw == 0 {
            problems.push("generator.kernel_extent must be non-zero".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }

    pub fn divisor(&self) -> usize {
        1 << self.levels
    }
}

/// Encoder-decoder with skip connections. Each encoder level is a conv block
/// followed by 2x2 max pooling; a bottleneck block sits at the coarsest
/// level; each decoder level upsamples, concatenates the matching encoder
/// output, and applies a conv block. A 1x1 convolution projects to one channel.
#[derive(Clone, Debug)]
pub struct Generator<T> {
    config: GeneratorConfig,
    params: ParamStore<T>,
    encoder: Vec<ConvBlock>,
    bottleneck: ConvBlock,
    decoder: Vec<ConvBlock>,
    head: ConvLayer,
}

#[derive(Clone, Debug)]
pub struct GeneratorCache<T> {
    encoder: Vec<BlockCache<T>>,
    skips: Vec<Tensor<T>>,
    bottleneck: BlockCache<T>,
    decoder: Vec<Option<BlockCache<T>>>,
    decoder_inputs_channels: Vec<usize>,
    head_input: Tensor<T>,
    raw_output: Tensor<T>,
}

impl<T> GeneratorCache<T> {
    /// Encoder outputs, finest level first.
    pub fn encoder_features(&self) -> &[Tensor<T>] {
        &self.skips
    }
}

fn block<T: Scalar>(
    store: &mut ParamStore<T>,
    name: &str,
    in_c: usize,
    out_c: usize,
    config: &GeneratorConfig,
    rng: &mut ChaCha8Rng,
) -> ConvBlock {
    let conv = ConvLayer::new(
        store,
        &format!("{name}.conv"),
        in_c,
        out_c,
        config.kernel_extent,
        ConvSpec::same(Padding::Zero),
        rng,
    );
    let norm = config
        .batch_norm
        .then(|| BatchNormLayer::new(store, &format!("{name}.bn"), out_c));
    ConvBlock {
        conv,
        norm,
        act: Activation::Relu,
    }
}

impl<T: Scalar> Generator<T> {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let ch = &config.channels_per_level;
        let levels = config.levels;

        let mut encoder = Vec::with_capacity(levels);
        for k in 0..levels {
            let in_c = if k == 0 { 1 } else { ch[k - 1] };
            encoder.push(block(&mut params, &format!("enc{k}"), in_c, ch[k], &config, &mut rng));
        }
        let deepest = ch[levels - 1];
        let bottleneck = block(&mut params, "bottleneck", deepest, deepest, &config, &mut rng);
        let mut decoder = Vec::with_capacity(levels);
        for k in (0..levels).rev() {
            let below = if k == levels - 1 { deepest } else { ch[k + 1] };
            decoder.push(block(&mut params, &format!("dec{k}"), below + ch[k], ch[k], &config, &mut rng));
        }
        decoder.reverse();
        let head = ConvLayer::new(&mut params, "head", ch[0], 1, (1, 1), ConvSpec::same(Padding::Zero), &mut rng);
        // Start mid-range so the first outputs correlate positively with [0, 1] targets.
        params.get_mut(head.bias).value[0] = T::of(HEAD_BIAS_INIT);
        Ok(Generator {
            config,
            params,
            encoder,
            bottleneck,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn head_bias(&self) -> crate::nn::ParamId {
        self.head.bias
    }

    /// Inference on a single image, clamped to `[0, 1]`.
    pub fn apply(&self, image: &crate::image::Image<T>) -> Result<crate::image::Image<T>> {
        let out = self.forward(&Tensor::from_image(image))?;
        Ok(out.image(0, 0).map(|v| v.max(T::zero()).min(T::one())))
    }
}

impl<T: Scalar> Network<T> for Generator<T> {
    type Cache = GeneratorCache<T>;

    fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn divisor(&self) -> usize {
        self.config.divisor()
    }

    fn forward_with_cache(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, GeneratorCache<T>)> {
        self.check_extent(x)?;
        if x.channels() != 1 {
            return Err(Error::ChannelMismatch {
                expected: 1,
                found: x.channels(),
            });
        }
        let levels = self.config.levels;
        let mut enc_caches = Vec::with_capacity(levels);
        let mut skips = Vec::with_capacity(levels);
        let mut h = x.clone();
        for blk in &self.encoder {
            let (s, c) = blk.forward(&self.params, &h, mode)?;
            h = ops::max_pool_2x2(&s)?;
            skips.push(s);
            enc_caches.push(c);
        }
        let (mut h, bottleneck) = self.bottleneck.forward(&self.params, &h, mode)?;
        let mut dec_caches: Vec<Option<BlockCache<T>>> = vec![None; levels];
        let mut dec_in = vec![0; levels];
        for k in (0..levels).rev() {
            let up = ops::upsample_2x2(&h);
            dec_in[k] = up.channels();
            let cat = ops::concat_channels(&up, &skips[k])?;
            let (out, c) = self.decoder[k].forward(&self.params, &cat, mode)?;
            dec_caches[k] = Some(c);
            h = out;
        }
        let raw = self.head.forward(&self.params, &h)?;
        let out = match self.config.output_activation {
            OutputActivation::Linear => raw.clone(),
            OutputActivation::Clamped => raw.map(|v| v.max(T::zero()).min(T::one())),
        };
        Ok((
            out,
            GeneratorCache {
                encoder: enc_caches,
                skips,
                bottleneck,
                decoder: dec_caches,
                decoder_inputs_channels: dec_in,
                head_input: h,
                raw_output: raw,
            },
        ))
    }

    fn backward(&mut self, cache: &GeneratorCache<T>, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let levels = self.config.levels;
        let mut g = match self.config.output_activation {
            OutputActivation::Linear => grad_output.clone(),
            OutputActivation::Clamped => {
                let mut g = grad_output.clone();
                for (gv, &r) in g.data_mut().iter_mut().zip(cache.raw_output.data()) {
                    if r < T::zero() || r > T::one() {
                        *gv = T::zero();
                    }
                }
                g
            }
        };
        g = self.head.backward(&mut self.params, &cache.head_input, &g)?;
        let mut skip_grads = Vec::with_capacity(levels);
        for k in 0..levels {
            let dc = cache.decoder[k].as_ref().expect("decoder cache");
            let g_cat = self.decoder[k].backward(&mut self.params, dc, &g)?;
            let (g_up, g_skip) = ops::concat_channels_backward(&g_cat, cache.decoder_inputs_channels[k])?;
            g = ops::upsample_2x2_backward(&g_up)?;
            skip_grads.push(g_skip);
        }
        g = self.bottleneck.backward(&mut self.params, &cache.bottleneck, &g)?;
        for k in (0..levels).rev() {
            let mut gs = ops::max_pool_2x2_backward(&cache.skips[k], &g)?;
            gs.add_assign(&skip_grads[k])?;
            g = self.encoder[k].backward(&mut self.params, &cache.encoder[k], &gs)?;
        }
        Ok(g)
    }

    fn commit_running_stats(&mut self, cache: &GeneratorCache<T>) {
        for (blk, c) in self.encoder.iter().zip(&cache.encoder) {
            blk.commit_running_stats(&mut self.params, c);
        }
        self.bottleneck.commit_running_stats(&mut self.params, &cache.bottleneck);
        for (blk, c) in self.decoder.iter().zip(&cache.decoder) {
            if let Some(c) = c {
                blk.commit_running_stats(&mut self.params, c);
            }
        }
    }

    fn conv_geometry(&self, extent: (usize, usize)) -> Vec<ConvGeometry> {
        let mut out = Vec::new();
        let (mut h, mut w) = extent;
        let mut sizes = Vec::new();
        for blk in &self.encoder {
            out.extend(blk.conv.geometry((h, w)));
            sizes.push((h, w));
            h /= 2;
            w /= 2;
        }
        out.extend(self.bottleneck.conv.geometry((h, w)));
        for k in (0..self.config.levels).rev() {
            out.extend(self.decoder[k].conv.geometry(sizes[k]));
        }
        out.extend(self.head.geometry(extent));
        out
    }
}
