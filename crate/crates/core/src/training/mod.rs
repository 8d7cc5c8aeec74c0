//! Supervised training on aligned pairs and cycle-consistent adversarial
//! training on unpaired groups, plus loss terms, history and checkpoints.

mod blackbox;
mod checkpoint;
mod graybox;
mod history;
mod losses;

pub use blackbox::{train_blackbox, BlackboxTrainer, CycleGanState, Phase};
pub use checkpoint::{Archive, CheckpointHeader, Section, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use graybox::{train_graybox, GrayboxTrainer};
pub use history::{StepRecord, TrainingHistory, ValidationRecord};
pub use losses::{
    batch_distance, cycle_loss, distance_and_gradient, logistic_discriminator_loss, logistic_generator_loss,
    lsgan_discriminator_loss, lsgan_generator_loss, AdversarialKind, DiscriminatorLoss, Distance, GeneratorLoss,
    LOG_FLOOR,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::window;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{AdamConfig, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Graybox,
    Blackbox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub regime: Regime,
    pub distance: Distance,
    pub adversarial_kind: AdversarialKind,
    /// Weight of the cycle term.
    pub cycle_weight: f64,
    /// Weight of the generator adversarial term.
    pub adversarial_weight: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// `[height, width]` of training crops; `None` trains on whole frames.
    pub crop: Option<[usize; 2]>,
    pub generator_adam: AdamConfig,
    pub discriminator_adam: AdamConfig,
    /// Skip discriminator updates entirely.
    pub freeze_discriminators: bool,
    /// Steps between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    /// Consecutive saturated steps that count as divergence; 0 disables the check.
    pub divergence_window: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            regime: Regime::Graybox,
            distance: Distance::Ssim,
            adversarial_kind: AdversarialKind::LeastSquares,
            cycle_weight: 10.0,
            adversarial_weight: 1.0,
            batch_size: 4,
            steps: 1000,
            seed: 0,
            crop: Some([64, 64]),
            generator_adam: AdamConfig::default(),
            discriminator_adam: AdamConfig::default(),
            freeze_discriminators: false,
            checkpoint_every: 0,
            divergence_window: 500,
        }
    }
}

fn check_adam(name: &str, a: &AdamConfig, problems: &mut Vec<String>) {
    if !(a.lr > 0.0 && a.lr.is_finite()) {
        problems.push(format!("{name}.lr must be > 0, got {}", a.lr));
    }
    if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
        problems.push(format!("{name} betas must lie in [0, 1), got ({}, {})", a.beta1, a.beta2));
    }
    if !(a.epsilon > 0.0) {
        problems.push(format!("{name}.epsilon must be > 0, got {}", a.epsilon));
    }
}

impl TrainingConfig {
    /// Every violated constraint, not just the first.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.batch_size == 0 {
            problems.push("batch_size must be >= 1".to_string());
        }
        if self.regime == Regime::Blackbox && !(self.cycle_weight > 0.0 && self.cycle_weight.is_finite()) {
            problems.push(format!("cycle_weight must be > 0 for blackbox training, got {}", self.cycle_weight));
        }
        if !(self.adversarial_weight >= 0.0 && self.adversarial_weight.is_finite()) {
            problems.push(format!("adversarial_weight must be >= 0, got {}", self.adversarial_weight));
        }
        if let Some([h, w]) = self.crop {
            if h == 0 || w == 0 {
                problems.push(format!("crop must be non-zero, got {h}x{w}"));
            }
            if self.distance == Distance::Ssim && (h < 11 || w < 11) {
                problems.push(format!("crop {h}x{w} is smaller than the 11x11 SSIM window"));
            }
        }
        check_adam("generator_adam", &self.generator_adam, &mut problems);
        check_adam("discriminator_adam", &self.discriminator_adam, &mut problems);
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }
}

/// Random stream for one step: a fixed key with the step as stream index,
/// so any step can be replayed without the ones before it.
pub fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64);
    rng
}

fn crop_extent<T: Scalar>(image: &Image<T>, crop: Option<[usize; 2]>) -> (usize, usize) {
    match crop {
        Some([h, w]) => (h, w),
        None => (image.height(), image.width()),
    }
}

fn offsets<R: Rng>(image_extent: (usize, usize), extent: (usize, usize), rng: &mut R) -> (usize, usize) {
    crate::data::crop_offsets(image_extent, extent, rng)
}

/// Aligned `(input, target)` images in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct PairedData<T> {
    inputs: Vec<Image<T>>,
    targets: Vec<Image<T>>,
}

impl<T: Scalar> PairedData<T> {
    pub fn new(inputs: Vec<Image<T>>, targets: Vec<Image<T>>) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::InvalidArgument(format!(
                "paired data needs equal non-zero counts, got {} inputs and {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        for (i, (x, y)) in inputs.iter().zip(&targets).enumerate() {
            if x.shape() != y.shape() {
                return Err(Error::InvalidArgument(format!(
                    "pair {i}: input {:?} and target {:?} differ in shape",
                    x.shape(),
                    y.shape()
                )));
            }
        }
        Ok(PairedData { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Uniformly drawn pairs with a shared crop each, plus the pair indices.
    pub fn sample<R: Rng>(&self, m: usize, crop: Option<[usize; 2]>, rng: &mut R) -> Result<(Tensor<T>, Tensor<T>, Vec<usize>)> {
        let mut xs = Vec::with_capacity(m);
        let mut ys = Vec::with_capacity(m);
        let mut ids = Vec::with_capacity(m);
        for _ in 0..m {
            let i = rng.random_range(0..self.inputs.len());
            let (x, y) = (&self.inputs[i], &self.targets[i]);
            let extent = crop_extent(x, crop);
            let (top, left) = offsets((x.height(), x.width()), extent, rng);
            xs.push(window(x, top, left, extent)?);
            ys.push(window(y, top, left, extent)?);
            ids.push(i);
        }
        Ok((Tensor::from_images(&xs)?, Tensor::from_images(&ys)?, ids))
    }
}

/// Raw-domain images and processed-domain images from disjoint sources.
#[derive(Clone, Debug)]
pub struct UnpairedData<T> {
    raw: Vec<Image<T>>,
    processed: Vec<Image<T>>,
}

impl<T: Scalar> UnpairedData<T> {
    pub fn new(raw: Vec<Image<T>>, processed: Vec<Image<T>>) -> Result<Self> {
        if raw.is_empty() || processed.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "unpaired data needs both groups non-empty, got {} raw and {} processed",
                raw.len(),
                processed.len()
            )));
        }
        Ok(UnpairedData { raw, processed })
    }

    pub fn raw(&self) -> &[Image<T>] {
        &self.raw
    }

    pub fn processed(&self) -> &[Image<T>] {
        &self.processed
    }

    fn draw<R: Rng>(pool: &[Image<T>], m: usize, crop: Option<[usize; 2]>, rng: &mut R) -> Result<(Tensor<T>, Vec<usize>)> {
        let mut xs = Vec::with_capacity(m);
        let mut ids = Vec::with_capacity(m);
        for _ in 0..m {
            let i = rng.random_range(0..pool.len());
            let x = &pool[i];
            let extent = crop_extent(x, crop);
            let (top, left) = offsets((x.height(), x.width()), extent, rng);
            xs.push(window(x, top, left, extent)?);
            ids.push(i);
        }
        Ok((Tensor::from_images(&xs)?, ids))
    }

    /// One raw batch then one processed batch, each with its own indices.
    #[allow(clippy::type_complexity)]
    pub fn sample<R: Rng>(
        &self,
        m: usize,
        crop: Option<[usize; 2]>,
        rng: &mut R,
    ) -> Result<((Tensor<T>, Vec<usize>), (Tensor<T>, Vec<usize>))> {
        let a = Self::draw(&self.raw, m, crop, rng)?;
        let b = Self::draw(&self.processed, m, crop, rng)?;
        Ok((a, b))
    }
}

fn check_loss<T: Scalar>(value: T, step: usize, batch: impl FnOnce() -> String) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss { step, batch: batch() })
    }
}
