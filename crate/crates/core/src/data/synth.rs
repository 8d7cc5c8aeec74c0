use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Cineloop, Frame, Target, ValueDomain};
use crate::error::{Error, Result};
use crate::image::Image;

/// Lowest representable raw level in dB.
pub const RAW_FLOOR_DB: f64 = -120.0;

const MAX_CONTRAST_DB: f64 = 30.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    /// `(row, col)` in pixels.
    pub center: (f64, f64),
    pub radius: f64,
    pub contrast_db: f64,
}

impl Lesion {
    fn contains(&self, row: usize, col: usize) -> bool {
        let dr = row as f64 - self.center.0;
        let dc = col as f64 - self.center.1;
        dr * dr + dc * dc <= self.radius * self.radius
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    /// `(height, width)`.
    pub extent: (usize, usize),
    pub frames: usize,
    pub lesions: Vec<Lesion>,
    /// Sub-resolution scatterers summed per pixel.
    pub speckle_density: f64,
    /// Gaussian point-spread standard deviation `(axial, lateral)` in pixels;
    /// zero disables blurring on that axis.
    pub psf_sigma: (f64, f64),
    pub depth_gain_db_per_pixel: f64,
    /// Share of scatterers re-drawn between consecutive frames.
    pub jitter_fraction: f64,
    pub seed: u64,
}

impl PhantomSpec {
    /// Homogeneous speckle, no lesions and no depth gain.
    pub fn homogeneous(extent: (usize, usize), frames: usize, seed: u64) -> Self {
        PhantomSpec {
            extent,
            frames,
            lesions: Vec::new(),
            speckle_density: 8.0,
            psf_sigma: (1.0, 0.6),
            depth_gain_db_per_pixel: 0.0,
            jitter_fraction: 0.05,
            seed,
        }
    }

    /// Randomized phantom: up to three lesions and a mild depth gain, all
    /// drawn from `seed`.
    pub fn random(extent: (usize, usize), frames: usize, seed: u64) -> Self {
        if extent.0 < 2 || extent.1 < 2 {
            return Self::homogeneous(extent, frames, seed);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_1e51_0a5);
        let (h, w) = (extent.0 as f64, extent.1 as f64);
        let small = h.min(w);
        let count = rng.random_range(0..=3);
        let lesions = (0..count)
            .map(|_| {
                let radius = rng.random_range(small * 0.06..=small * 0.2);
                Lesion {
                    center: (rng.random_range(0.0..h), rng.random_range(0.0..w)),
                    radius,
                    contrast_db: rng.random_range(-25.0..=15.0),
                }
            })
            .collect();
        PhantomSpec {
            lesions,
            depth_gain_db_per_pixel: rng.random_range(-0.1..=0.05),
            ..Self::homogeneous(extent, frames, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let (h, w) = self.extent;
        if h < 2 || w < 2 {
            problems.push(format!("degenerate extent {h}x{w}; both sides must be >= 2"));
        }
        if self.frames == 0 {
            problems.push("frames must be >= 1".to_string());
        }
        if !(self.speckle_density >= 1.0 && self.speckle_density.is_finite()) {
            problems.push(format!("speckle_density must be >= 1, got {}", self.speckle_density));
        }
        let (sa, sl) = self.psf_sigma;
        if !(sa >= 0.0 && sl >= 0.0 && sa.is_finite() && sl.is_finite()) {
            problems.push(format!("psf_sigma must be finite and >= 0, got {:?}", self.psf_sigma));
        }
        if !self.depth_gain_db_per_pixel.is_finite() {
            problems.push("depth_gain_db_per_pixel must be finite".to_string());
        }
        if !(0.0..=1.0).contains(&self.jitter_fraction) {
            problems.push(format!("jitter_fraction must lie in [0, 1], got {}", self.jitter_fraction));
        }
        for (i, l) in self.lesions.iter().enumerate() {
            let (r, c) = l.center;
            if !(r >= 0.0 && r < h as f64 && c >= 0.0 && c < w as f64) {
                problems.push(format!("lesion {i} center {:?} lies outside the extent", l.center));
            }
            if !(l.radius > 0.0 && l.radius.is_finite()) {
                problems.push(format!("lesion {i} radius must be > 0, got {}", l.radius));
            }
            if !(l.contrast_db.abs() <= MAX_CONTRAST_DB) {
                problems.push(format!(
                    "lesion {i} contrast {} dB outside [-{MAX_CONTRAST_DB}, {MAX_CONTRAST_DB}]",
                    l.contrast_db
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }
}

/// Taps of a Gaussian normalized to unit energy, so filtered unit-variance
/// white noise keeps unit variance.
fn psf_taps(sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let energy = taps.iter().map(|t| t * t).sum::<f64>().sqrt();
    taps.into_iter().map(|t| t / energy).collect()
}

/// Complex scatterer field on a grid with a margin wide enough that the
/// blurred output never touches the border.
struct ScattererField {
    height: usize,
    width: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl ScattererField {
    fn draw_pixel<R: Rng>(rng: &mut R, n: usize) -> (f64, f64) {
        // Mean of n unit circular Gaussians, rescaled to unit variance.
        let scale = (2.0 * n as f64).sqrt().recip();
        let (mut re, mut im) = (0.0, 0.0);
        for _ in 0..n {
            re += rng.sample::<f64, _>(StandardNormal);
            im += rng.sample::<f64, _>(StandardNormal);
        }
        (re * scale, im * scale)
    }

    fn new<R: Rng>(height: usize, width: usize, n: usize, rng: &mut R) -> Self {
        let mut re = Vec::with_capacity(height * width);
        let mut im = Vec::with_capacity(height * width);
        for _ in 0..height * width {
            let (a, b) = Self::draw_pixel(rng, n);
            re.push(a);
            im.push(b);
        }
        ScattererField { height, width, re, im }
    }

    fn reseed<R: Rng>(&mut self, fraction: f64, n: usize, rng: &mut R) {
        let total = self.re.len();
        let count = ((total as f64) * fraction).round() as usize;
        for i in sample(rng, total, count.min(total)) {
            let (a, b) = Self::draw_pixel(rng, n);
            self.re[i] = a;
            self.im[i] = b;
        }
    }

    /// `|field * psf|` over the interior `(out_h, out_w)` window.
    fn envelope(&self, axial: &[f64], lateral: &[f64], out_h: usize, out_w: usize) -> Image<f64> {
        let (ka, kl) = (axial.len(), lateral.len());
        let w = self.width;
        // Lateral pass over all rows, then axial.
        let mut tre = vec![0.0; self.height * out_w];
        let mut tim = vec![0.0; self.height * out_w];
        for r in 0..self.height {
            for c in 0..out_w {
                let (mut a, mut b) = (0.0, 0.0);
                for (j, &t) in lateral.iter().enumerate() {
                    a += t * self.re[r * w + c + j];
                    b += t * self.im[r * w + c + j];
                }
                tre[r * out_w + c] = a;
                tim[r * out_w + c] = b;
            }
        }
        debug_assert_eq!(self.height, out_h + ka - 1);
        debug_assert_eq!(self.width, out_w + kl - 1);
        Image::from_fn(out_h, out_w, |r, c| {
            let (mut a, mut b) = (0.0, 0.0);
            for (i, &t) in axial.iter().enumerate() {
                a += t * tre[(r + i) * out_w + c];
                b += t * tim[(r + i) * out_w + c];
            }
            a.hypot(b)
        })
    }
}

/// Linear envelope frames: blurred circular-Gaussian speckle (unit
/// Rayleigh scale before modulation) scaled by lesion contrasts and depth gain.
pub fn synth_envelopes(spec: &PhantomSpec) -> Result<Vec<Image<f64>>> {
    spec.validate()?;
    let (h, w) = spec.extent;
    let axial = psf_taps(spec.psf_sigma.0);
    let lateral = psf_taps(spec.psf_sigma.1);
    let n = spec.speckle_density.round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut field = ScattererField::new(h + axial.len() - 1, w + lateral.len() - 1, n, &mut rng);

    let gain = Image::from_fn(h, w, |r, c| {
        let mut db = spec.depth_gain_db_per_pixel * r as f64;
        for l in &spec.lesions {
            if l.contains(r, c) {
                db += l.contrast_db;
            }
        }
        10f64.powf(db / 20.0)
    });

    let mut frames = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        if t > 0 {
            field.reseed(spec.jitter_fraction, n, &mut rng);
        }
        let mut env = field.envelope(&axial, &lateral, h, w);
        for (e, &g) in env.data_mut().iter_mut().zip(gain.data()) {
            *e *= g;
        }
        frames.push(env);
    }
    Ok(frames)
}

/// `20 log10(e / max e)`, clamped below at `floor_db`.
pub fn log_compress(envelope: &Image<f64>, floor_db: f64) -> Result<Image<f64>> {
    if !(floor_db < 0.0) {
        return Err(Error::InvalidArgument(format!("floor must be negative, got {floor_db} dB")));
    }
    if let Some(i) = envelope.data().iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "envelope must be finite and non-negative; pixel {i} is {}",
            envelope.data()[i]
        )));
    }
    let max = envelope.data().iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::InvalidArgument("envelope is zero everywhere".into()));
    }
    Ok(envelope.map(|v| if v == 0.0 { floor_db } else { (20.0 * (v / max).log10()).max(floor_db) }))
}

/// Raw decibel cineloop for `spec`, each frame log-compressed against its own peak.
pub fn synth_cineloop(spec: &PhantomSpec, id: &str) -> Result<Cineloop> {
    let frames = synth_envelopes(spec)?
        .iter()
        .map(|env| Ok(Frame::new(log_compress(env, RAW_FLOOR_DB)?.cast(), ValueDomain::RAW)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Cineloop {
        id: id.to_string(),
        frames,
        scanner: "synthetic".into(),
        target: Target::Synthetic,
        seed: Some(spec.seed),
    })
}
