use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{self, SsimParams};
use crate::nn::Tensor;
use crate::scalar::Scalar;

/// Probability floor inside the logistic log terms.
pub const LOG_FLOOR: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    Mse,
    Mae,
    /// `1 - mean SSIM` with unit dynamic range.
    Ssim,
}

impl Distance {
    /// Name of the minimized quantity.
    pub fn label(self) -> &'static str {
        match self {
            Distance::Mse => "mse",
            Distance::Mae => "mae",
            Distance::Ssim => "1-ssim",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialKind {
    LeastSquares,
    Logistic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorLoss<T> {
    pub value: T,
    pub grad_real: Tensor<T>,
    pub grad_fake: Tensor<T>,
    /// Patch probabilities that hit the log floor.
    pub clamped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorLoss<T> {
    pub value: T,
    pub grad_fake: Tensor<T>,
    pub clamped: usize,
    /// Every patch is scored at or beyond the confidently-fake extreme.
    pub saturated: bool,
}

/// `½·mean[(D(real) - 1)²] + ½·mean[D(fake)²]` and its gradients.
pub fn lsgan_discriminator_loss<T: Scalar>(real: &Tensor<T>, fake: &Tensor<T>) -> DiscriminatorLoss<T> {
    let half = T::of(0.5);
    let (nr, nf) = (T::of(real.len() as f64), T::of(fake.len() as f64));
    let mut value = T::zero();
    let mut sum_r = T::zero();
    for &d in real.data() {
        sum_r += (d - T::one()) * (d - T::one());
    }
    let mut sum_f = T::zero();
    for &d in fake.data() {
        sum_f += d * d;
    }
    value += half * sum_r / nr + half * sum_f / nf;
    DiscriminatorLoss {
        value,
        grad_real: real.map(|d| (d - T::one()) / nr),
        grad_fake: fake.map(|d| d / nf),
        clamped: 0,
    }
}

/// `mean[(D(fake) - 1)²]` and its gradient. Saturated when no patch scores above 0.
pub fn lsgan_generator_loss<T: Scalar>(fake: &Tensor<T>) -> GeneratorLoss<T> {
    let n = T::of(fake.len() as f64);
    let mut sum = T::zero();
    for &d in fake.data() {
        sum += (d - T::one()) * (d - T::one());
    }
    GeneratorLoss {
        value: sum / n,
        grad_fake: fake.map(|d| T::of(2.0) * (d - T::one()) / n),
        clamped: 0,
        saturated: fake.data().iter().all(|&d| d <= T::zero()),
    }
}

fn sigmoid<T: Scalar>(s: T) -> T {
    if s >= T::zero() {
        T::one() / (T::one() + (-s).exp())
    } else {
        let e = s.exp();
        e / (T::one() + e)
    }
}

/// `-log(max(p, floor))` and its derivative with respect to `p`.
fn neg_log_floor<T: Scalar>(p: T, clamped: &mut usize) -> (T, T) {
    let floor = T::of(LOG_FLOOR);
    if p < floor {
        *clamped += 1;
        (-floor.ln(), T::zero())
    } else {
        (-p.ln(), -T::one() / p)
    }
}

/// `-mean log σ(real) - mean log(1 - σ(fake))` on patch scores.
pub fn logistic_discriminator_loss<T: Scalar>(real: &Tensor<T>, fake: &Tensor<T>) -> DiscriminatorLoss<T> {
    let (nr, nf) = (T::of(real.len() as f64), T::of(fake.len() as f64));
    let mut clamped = 0;
    let mut value = T::zero();
    let mut grad_real = real.clone();
    for (g, &s) in grad_real.data_mut().iter_mut().zip(real.data()) {
        let p = sigmoid(s);
        let (v, dp) = neg_log_floor(p, &mut clamped);
        value += v / nr;
        *g = dp * p * (T::one() - p) / nr;
    }
    let mut grad_fake = fake.clone();
    for (g, &s) in grad_fake.data_mut().iter_mut().zip(fake.data()) {
        let p = sigmoid(s);
        let q = T::one() - p;
        let (v, dq) = neg_log_floor(q, &mut clamped);
        value += v / nf;
        *g = -dq * p * q / nf;
    }
    DiscriminatorLoss {
        value,
        grad_real,
        grad_fake,
        clamped,
    }
}

/// Non-saturating generator objective `-mean log σ(fake)`. Saturated when
/// every patch probability is at the floor.
pub fn logistic_generator_loss<T: Scalar>(fake: &Tensor<T>) -> GeneratorLoss<T> {
    let n = T::of(fake.len() as f64);
    let mut clamped = 0;
    let mut value = T::zero();
    let mut grad_fake = fake.clone();
    for (g, &s) in grad_fake.data_mut().iter_mut().zip(fake.data()) {
        let p = sigmoid(s);
        let (v, dp) = neg_log_floor(p, &mut clamped);
        value += v / n;
        *g = dp * p * (T::one() - p) / n;
    }
    GeneratorLoss {
        value,
        grad_fake,
        saturated: clamped == fake.len(),
        clamped,
    }
}

impl AdversarialKind {
    pub fn discriminator_loss<T: Scalar>(self, real: &Tensor<T>, fake: &Tensor<T>) -> DiscriminatorLoss<T> {
        match self {
            AdversarialKind::LeastSquares => lsgan_discriminator_loss(real, fake),
            AdversarialKind::Logistic => logistic_discriminator_loss(real, fake),
        }
    }

    pub fn generator_loss<T: Scalar>(self, fake: &Tensor<T>) -> GeneratorLoss<T> {
        match self {
            AdversarialKind::LeastSquares => lsgan_generator_loss(fake),
            AdversarialKind::Logistic => logistic_generator_loss(fake),
        }
    }
}

fn training_ssim_params() -> SsimParams {
    SsimParams::new(1.0)
}

/// `f(original, reconstructed)`; for SSIM this is `1 - mean SSIM`.
pub fn cycle_loss<T: Scalar>(original: &Image<T>, reconstructed: &Image<T>, f: Distance) -> Result<T> {
    Ok(match f {
        Distance::Mse => metrics::mse(reconstructed, original)?,
        Distance::Mae => metrics::mae(reconstructed, original)?,
        Distance::Ssim => T::one() - metrics::ssim(reconstructed, original, &training_ssim_params())?.mean_ssim,
    })
}

/// Loss and gradient with respect to `prediction` for one image.
pub fn distance_and_gradient<T: Scalar>(prediction: &Image<T>, target: &Image<T>, f: Distance) -> Result<(T, Image<T>)> {
    match f {
        Distance::Mse => metrics::mse_loss_and_gradient(prediction, target),
        Distance::Mae => metrics::mae_loss_and_gradient(prediction, target),
        Distance::Ssim => metrics::ssim_loss_and_gradient(prediction, target, &training_ssim_params()),
    }
}

/// Mean per-image distance over a single-channel batch, with the gradient
/// of that mean with respect to `prediction`.
pub fn batch_distance<T: Scalar>(prediction: &Tensor<T>, target: &Tensor<T>, f: Distance) -> Result<(T, Tensor<T>)> {
    if prediction.shape() != target.shape() {
        return Err(Error::shape(&prediction.shape(), &target.shape()));
    }
    if prediction.channels() != 1 {
        return Err(Error::ChannelMismatch {
            expected: 1,
            found: prediction.channels(),
        });
    }
    let n = prediction.batch();
    let inv = T::one() / T::of(n as f64);
    let mut total = T::zero();
    let mut grads = Vec::with_capacity(n);
    for i in 0..n {
        let (l, g) = distance_and_gradient(&prediction.image(i, 0), &target.image(i, 0), f)?;
        total += l;
        grads.push(g.map(|v| v * inv));
    }
    Ok((total * inv, Tensor::from_images(&grads)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(values: &[f64]) -> Tensor<f64> {
        Tensor::new([1, 1, 1, values.len()], values.to_vec()).unwrap()
    }

    #[test]
    fn lsgan_examples() {
        assert_eq!(lsgan_discriminator_loss(&t(&[1.0; 4]), &t(&[0.0; 4])).value, 0.0);
        assert_eq!(lsgan_discriminator_loss(&t(&[0.5; 4]), &t(&[0.5; 4])).value, 0.25);
        assert_eq!(lsgan_generator_loss(&t(&[1.0; 4])).value, 0.0);
        let g = lsgan_generator_loss(&t(&[0.0; 4]));
        assert_eq!(g.value, 1.0);
        assert!(g.saturated);
    }

    #[test]
    fn logistic_examples() {
        let g = logistic_generator_loss(&t(&[0.0; 4]));
        assert!((g.value - std::f64::consts::LN_2).abs() < 1e-15);
        let d = logistic_discriminator_loss(&t(&[20.0; 4]), &t(&[-20.0; 4]));
        assert!(d.value < 1e-8);
        let g = logistic_generator_loss(&t(&[-40.0; 4]));
        assert_eq!(g.clamped, 4);
        assert!(g.saturated);
        assert!((g.value + LOG_FLOOR.ln()).abs() < 1e-12);
    }

    #[test]
    fn cycle_examples() {
        let a = Image::new(1, 2, vec![0.0, 0.5]).unwrap();
        let b = Image::new(1, 2, vec![0.5, 1.0]).unwrap();
        assert_eq!(cycle_loss(&a, &b, Distance::Mae).unwrap(), 0.5);
        for f in [Distance::Mse, Distance::Mae] {
            assert_eq!(cycle_loss(&a, &a, f).unwrap(), 0.0);
        }
        let c = Image::from_fn(16, 16, |r, c| ((r * 7 + c * 3) % 11) as f64 / 10.0);
        assert!(cycle_loss(&c, &c, Distance::Ssim).unwrap().abs() < 1e-12);
        assert!(cycle_loss(&a, &Image::zeros(2, 1), Distance::Mse).is_err());
    }
}
