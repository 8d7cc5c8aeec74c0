//! Image quality measures: MSE, MAE, PSNR and windowed SSIM with its
//! luminance / contrast-structure decomposition, plus the loss gradients used
//! by training.
//!
//! SSIM windows are placed at valid positions only, so the per-window map is
//! `(h - e + 1) x (w - e + 1)` for a window extent `e`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

pub const DEFAULT_WINDOW_EXTENT: usize = 11;
pub const DEFAULT_WINDOW_SIGMA: f64 = 1.5;
pub const DEFAULT_K1: f64 = 0.01;
pub const DEFAULT_K2: f64 = 0.03;

/// Window shape and stabilizing constants for SSIM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    window_extent: usize,
    window_weights: Vec<f64>,
    k1: f64,
    k2: f64,
    dynamic_range: f64,
}

impl SsimParams {
    /// 11x11 Gaussian window (sigma 1.5) with the standard constants.
    pub fn new(dynamic_range: f64) -> Self {
        Self::gaussian(DEFAULT_WINDOW_EXTENT, DEFAULT_WINDOW_SIGMA, dynamic_range)
            .expect("default window is valid")
    }

    pub fn gaussian(extent: usize, sigma: f64, dynamic_range: f64) -> Result<Self> {
        if sigma <= 0.0 || !sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("window sigma must be positive, got {sigma}")));
        }
        let half = extent as f64 / 2.0 - 0.5;
        let mut weights = Vec::with_capacity(extent * extent);
        for r in 0..extent {
            for c in 0..extent {
                let dr = r as f64 - half;
                let dc = c as f64 - half;
                weights.push((-(dr * dr + dc * dc) / (2.0 * sigma * sigma)).exp());
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self::with_weights(extent, weights, dynamic_range)
    }

    pub fn uniform(extent: usize, dynamic_range: f64) -> Result<Self> {
        let n = extent * extent;
        Self::with_weights(extent, vec![1.0 / n as f64; n], dynamic_range)
    }

    pub fn with_weights(extent: usize, weights: Vec<f64>, dynamic_range: f64) -> Result<Self> {
        let params = SsimParams {
            window_extent: extent,
            window_weights: weights,
            k1: DEFAULT_K1,
            k2: DEFAULT_K2,
            dynamic_range,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_constants(mut self, k1: f64, k2: f64) -> Result<Self> {
        self.k1 = k1;
        self.k2 = k2;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let e = self.window_extent;
        if e < 3 || e % 2 == 0 {
            return Err(Error::InvalidArgument(format!("window extent must be odd and >= 3, got {e}")));
        }
        if self.window_weights.len() != e * e {
            return Err(Error::shape(&[e, e], &[self.window_weights.len()]));
        }
        if self.window_weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidArgument("window weights must be non-negative".into()));
        }
        let total: f64 = self.window_weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("window weights sum to {total}, not 1")));
        }
        if !(self.dynamic_range > 0.0) || !self.dynamic_range.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "dynamic range must be positive, got {}",
                self.dynamic_range
            )));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0) {
            return Err(Error::InvalidArgument("k1 and k2 must be positive".into()));
        }
        Ok(())
    }

    pub fn window_extent(&self) -> usize {
        self.window_extent
    }

    pub fn window_weights(&self) -> &[f64] {
        &self.window_weights
    }

    pub fn k1(&self) -> f64 {
        self.k1
    }

    pub fn k2(&self) -> f64 {
        self.k2
    }

    pub fn dynamic_range(&self) -> f64 {
        self.dynamic_range
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn c3(&self) -> f64 {
        self.c2() / 2.0
    }
}

/// Weighted first and second moments of one window pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimWindowStats<T> {
    pub mu_x: T,
    pub mu_y: T,
    pub var_x: T,
    pub var_y: T,
    pub cov_xy: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SsimResult<T> {
    pub mean_ssim: T,
    pub mean_l: T,
    pub mean_cs: T,
    /// Per-window SSIM at valid window positions.
    pub map: Option<Image<T>>,
}

/// Peak signal-to-noise ratio; identical images have no finite PSNR.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    /// Decibel value, `f64::INFINITY` for identical images.
    pub fn db(self) -> f64 {
        match self {
            Psnr::Finite(v) => v,
            Psnr::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Psnr::Infinite)
    }
}

pub fn mse<T: Scalar>(x: &Image<T>, y: &Image<T>) -> Result<T> {
    x.ensure_same_shape(y)?;
    let sum: T = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(sum / T::of(x.len() as f64))
}

pub fn mae<T: Scalar>(x: &Image<T>, y: &Image<T>) -> Result<T> {
    x.ensure_same_shape(y)?;
    let sum: T = x.data().iter().zip(y.data()).map(|(&a, &b)| (a - b).abs()).sum();
    Ok(sum / T::of(x.len() as f64))
}

pub fn psnr<T: Scalar>(x: &Image<T>, y: &Image<T>, max_intensity: f64) -> Result<Psnr> {
    psnr_from_mse(mse(x, y)?.as_f64(), max_intensity)
}

pub fn psnr_from_mse(mse: f64, max_intensity: f64) -> Result<Psnr> {
    if !(max_intensity > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "max intensity must be positive, got {max_intensity}"
        )));
    }
    if mse == 0.0 {
        return Ok(Psnr::Infinite);
    }
    Ok(Psnr::Finite(20.0 * (max_intensity / mse.sqrt()).log10()))
}

fn check_window<T: Scalar>(x: &Image<T>, y: &Image<T>, params: &SsimParams) -> Result<(usize, usize)> {
    x.ensure_same_shape(y)?;
    let e = params.window_extent;
    if x.height() < e || x.width() < e {
        return Err(Error::ImageTooSmall {
            height: x.height(),
            width: x.width(),
            min: e,
        });
    }
    Ok((x.height() - e + 1, x.width() - e + 1))
}

/// Moments of every valid window, row-major over window positions.
pub fn window_stats<T: Scalar>(
    x: &Image<T>,
    y: &Image<T>,
    params: &SsimParams,
) -> Result<(usize, usize, Vec<SsimWindowStats<T>>)> {
    let (mh, mw) = check_window(x, y, params)?;
    let e = params.window_extent;
    let weights: Vec<T> = params.window_weights.iter().map(|&w| T::of(w)).collect();
    let (xs, ys, width) = (x.data(), y.data(), x.width());
    let mut stats = Vec::with_capacity(mh * mw);
    for r in 0..mh {
        for c in 0..mw {
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) =
                (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
            for dr in 0..e {
                let row = (r + dr) * width + c;
                let wrow = &weights[dr * e..(dr + 1) * e];
                for (dc, &w) in wrow.iter().enumerate() {
                    let a = xs[row + dc];
                    let b = ys[row + dc];
                    let wa = w * a;
                    let wb = w * b;
                    sx += wa;
                    sy += wb;
                    sxx += wa * a;
                    syy += wb * b;
                    sxy += wa * b;
                }
            }
            stats.push(SsimWindowStats {
                mu_x: sx,
                mu_y: sy,
                var_x: (sxx - sx * sx).max(T::zero()),
                var_y: (syy - sy * sy).max(T::zero()),
                cov_xy: sxy - sx * sy,
            });
        }
    }
    Ok((mh, mw, stats))
}

struct Constants<T> {
    c1: T,
    c2: T,
    c3: T,
}

impl<T: Scalar> Constants<T> {
    fn of(params: &SsimParams) -> Self {
        Constants {
            c1: T::of(params.c1()),
            c2: T::of(params.c2()),
            c3: T::of(params.c3()),
        }
    }

    fn luminance(&self, s: &SsimWindowStats<T>) -> T {
        let two = T::of(2.0);
        (two * s.mu_x * s.mu_y + self.c1) / (s.mu_x * s.mu_x + s.mu_y * s.mu_y + self.c1)
    }

    fn contrast(&self, s: &SsimWindowStats<T>) -> T {
        let two = T::of(2.0);
        let (sd_x, sd_y) = (s.var_x.sqrt(), s.var_y.sqrt());
        (two * sd_x * sd_y + self.c2) / (s.var_x + s.var_y + self.c2)
    }

    fn structure(&self, s: &SsimWindowStats<T>) -> T {
        let (sd_x, sd_y) = (s.var_x.sqrt(), s.var_y.sqrt());
        (s.cov_xy + self.c3) / (sd_x * sd_y + self.c3)
    }

    fn contrast_structure(&self, s: &SsimWindowStats<T>) -> T {
        let two = T::of(2.0);
        (two * s.cov_xy + self.c2) / (s.var_x + s.var_y + self.c2)
    }
}

fn mean_of<T: Scalar>(values: impl Iterator<Item = T>, n: usize) -> T {
    values.sum::<T>() / T::of(n as f64)
}

/// Mean SSIM with each window scored as the product of its luminance,
/// contrast and structure terms.
pub fn ssim<T: Scalar>(x: &Image<T>, y: &Image<T>, params: &SsimParams) -> Result<SsimResult<T>> {
    ssim_impl(x, y, params, false)
}

/// As [`ssim`], also returning the per-window map.
pub fn ssim_with_map<T: Scalar>(x: &Image<T>, y: &Image<T>, params: &SsimParams) -> Result<SsimResult<T>> {
    ssim_impl(x, y, params, true)
}

fn ssim_impl<T: Scalar>(x: &Image<T>, y: &Image<T>, params: &SsimParams, keep_map: bool) -> Result<SsimResult<T>> {
    let (mh, mw, stats) = window_stats(x, y, params)?;
    let k = Constants::of(params);
    let n = stats.len();
    let mut map = Vec::with_capacity(n);
    let (mut sum_l, mut sum_cs) = (T::zero(), T::zero());
    for s in &stats {
        let l = k.luminance(s);
        map.push(l * k.contrast(s) * k.structure(s));
        sum_l += l;
        sum_cs += k.contrast_structure(s);
    }
    let nn = T::of(n as f64);
    Ok(SsimResult {
        mean_ssim: mean_of(map.iter().copied(), n),
        mean_l: sum_l / nn,
        mean_cs: sum_cs / nn,
        map: if keep_map { Some(Image::new(mh, mw, map)?) } else { None },
    })
}

/// Mean luminance and mean contrast-structure terms.
pub fn ssim_components<T: Scalar>(x: &Image<T>, y: &Image<T>, params: &SsimParams) -> Result<(T, T)> {
    let (_, _, stats) = window_stats(x, y, params)?;
    let k = Constants::of(params);
    let n = stats.len();
    Ok((
        mean_of(stats.iter().map(|s| k.luminance(s)), n),
        mean_of(stats.iter().map(|s| k.contrast_structure(s)), n),
    ))
}

/// Per-window luminance and contrast-structure maps.
pub fn ssim_component_maps<T: Scalar>(
    x: &Image<T>,
    y: &Image<T>,
    params: &SsimParams,
) -> Result<(Image<T>, Image<T>)> {
    let (mh, mw, stats) = window_stats(x, y, params)?;
    let k = Constants::of(params);
    let l = stats.iter().map(|s| k.luminance(s)).collect();
    let cs = stats.iter().map(|s| k.contrast_structure(s)).collect();
    Ok((Image::new(mh, mw, l)?, Image::new(mh, mw, cs)?))
}

/// `1 - mean_ssim` and its exact gradient with respect to every pixel of `x`.
pub fn ssim_loss_and_gradient<T: Scalar>(
    x: &Image<T>,
    y: &Image<T>,
    params: &SsimParams,
) -> Result<(T, Image<T>)> {
    let (mh, mw, stats) = window_stats(x, y, params)?;
    let k = Constants::of(params);
    let e = params.window_extent;
    let two = T::of(2.0);
    let n = T::of(stats.len() as f64);

    // Per window, d(ssim_w)/dx_p = w_{p-o} * (alpha + beta * x_p + gamma * y_p).
    let mut alpha = Vec::with_capacity(stats.len());
    let mut beta = Vec::with_capacity(stats.len());
    let mut gamma = Vec::with_capacity(stats.len());
    let mut total = T::zero();
    for s in &stats {
        let a1 = two * s.mu_x * s.mu_y + k.c1;
        let b1 = s.mu_x * s.mu_x + s.mu_y * s.mu_y + k.c1;
        let a2 = two * s.cov_xy + k.c2;
        let b2 = s.var_x + s.var_y + k.c2;
        let l = a1 / b1;
        let cs = a2 / b2;
        total += l * cs;
        let d_mu = cs * (two * s.mu_y * b1 - a1 * two * s.mu_x) / (b1 * b1);
        let d_var = -l * a2 / (b2 * b2);
        let d_cov = l * two / b2;
        alpha.push(d_mu - two * s.mu_x * d_var - s.mu_y * d_cov);
        beta.push(two * d_var);
        gamma.push(d_cov);
    }

    let weights: Vec<T> = params.window_weights.iter().map(|&w| T::of(w)).collect();
    let width = x.width();
    let mut ga = vec![T::zero(); x.len()];
    let mut gb = vec![T::zero(); x.len()];
    let mut gc = vec![T::zero(); x.len()];
    for r in 0..mh {
        for c in 0..mw {
            let idx = r * mw + c;
            let (a, b, g) = (alpha[idx], beta[idx], gamma[idx]);
            for dr in 0..e {
                let row = (r + dr) * width + c;
                for dc in 0..e {
                    let w = weights[dr * e + dc];
                    ga[row + dc] += w * a;
                    gb[row + dc] += w * b;
                    gc[row + dc] += w * g;
                }
            }
        }
    }
    let grad = x
        .data()
        .iter()
        .zip(y.data())
        .enumerate()
        .map(|(p, (&xp, &yp))| -(ga[p] + gb[p] * xp + gc[p] * yp) / n)
        .collect();
    Ok((T::one() - total / n, Image::new(x.height(), x.width(), grad)?))
}

pub fn ssim_loss_gradient<T: Scalar>(x: &Image<T>, y: &Image<T>, params: &SsimParams) -> Result<Image<T>> {
    Ok(ssim_loss_and_gradient(x, y, params)?.1)
}

/// Mean squared error and its gradient with respect to `x`.
pub fn mse_loss_and_gradient<T: Scalar>(x: &Image<T>, y: &Image<T>) -> Result<(T, Image<T>)> {
    let loss = mse(x, y)?;
    let scale = T::of(2.0 / x.len() as f64);
    let grad = x.data().iter().zip(y.data()).map(|(&a, &b)| scale * (a - b)).collect();
    Ok((loss, Image::new(x.height(), x.width(), grad)?))
}

/// Mean absolute error and its (sub)gradient with respect to `x`; zero where `x == y`.
pub fn mae_loss_and_gradient<T: Scalar>(x: &Image<T>, y: &Image<T>) -> Result<(T, Image<T>)> {
    let loss = mae(x, y)?;
    let scale = T::of(1.0 / x.len() as f64);
    let grad = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| {
            if a > b {
                scale
            } else if a < b {
                -scale
            } else {
                T::zero()
            }
        })
        .collect();
    Ok((loss, Image::new(x.height(), x.width(), grad)?))
}
