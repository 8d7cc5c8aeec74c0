//! Independent reference implementations used as test oracles, plus a
//! central finite-difference gradient checker.

#![allow(dead_code)]

use mimic_core::metrics::SsimParams;
use mimic_core::nn::{DifferentiableOp, Padding, Tensor};
use mimic_core::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Image<f64> {
    Image::from_fn(h, w, |_, _| rng.random::<f64>())
}

pub fn random_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random::<f64>() * 2.0 - 1.0)
}

pub fn mse_oracle(x: &Image<f64>, y: &Image<f64>) -> f64 {
    let mut acc = 0.0;
    for r in 0..x.height() {
        for c in 0..x.width() {
            let d = x.get(r, c) - y.get(r, c);
            acc += d * d;
        }
    }
    acc / (x.height() * x.width()) as f64
}

pub fn mae_oracle(x: &Image<f64>, y: &Image<f64>) -> f64 {
    let mut acc = 0.0;
    for r in 0..x.height() {
        for c in 0..x.width() {
            acc += (x.get(r, c) - y.get(r, c)).abs();
        }
    }
    acc / (x.height() * x.width()) as f64
}

/// Mean SSIM, mean luminance, mean contrast-structure, with every window
/// copied out explicitly and contrast and structure evaluated separately.
pub fn ssim_oracle(x: &Image<f64>, y: &Image<f64>, params: &SsimParams) -> (f64, f64, f64) {
    let n = params.window_extent();
    let w = params.window_weights();
    let l_range = params.dynamic_range();
    let c1 = (params.k1() * l_range).powi(2);
    let c2 = (params.k2() * l_range).powi(2);
    let c3 = c2 / 2.0;
    let (mut s_sum, mut l_sum, mut cs_sum, mut count) = (0.0, 0.0, 0.0, 0usize);
    for top in 0..=x.height() - n {
        for left in 0..=x.width() - n {
            let mut wx = Vec::with_capacity(n * n);
            let mut wy = Vec::with_capacity(n * n);
            for r in 0..n {
                for c in 0..n {
                    wx.push(x.get(top + r, left + c));
                    wy.push(y.get(top + r, left + c));
                }
            }
            let mx: f64 = wx.iter().zip(w).map(|(v, k)| v * k).sum();
            let my: f64 = wy.iter().zip(w).map(|(v, k)| v * k).sum();
            let vx: f64 = wx.iter().zip(w).map(|(v, k)| k * (v - mx).powi(2)).sum::<f64>().max(0.0);
            let vy: f64 = wy.iter().zip(w).map(|(v, k)| k * (v - my).powi(2)).sum::<f64>().max(0.0);
            let cov: f64 = wx.iter().zip(&wy).zip(w).map(|((a, b), k)| k * (a - mx) * (b - my)).sum();
            let (sx, sy) = (vx.sqrt(), vy.sqrt());
            let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
            let c = (2.0 * sx * sy + c2) / (vx + vy + c2);
            let s = (cov + c3) / (sx * sy + c3);
            s_sum += l * c * s;
            l_sum += l;
            cs_sum += c * s;
            count += 1;
        }
    }
    let k = count as f64;
    (s_sum / k, l_sum / k, cs_sum / k)
}

/// Mirror index excluding the edge sample, written independently of the library.
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * (n - 1) - i;
        }
    }
    i as usize
}

/// Cross-correlation by direct summation over every output, channel and tap.
pub fn conv_oracle(input: &Tensor<f64>, kernels: &Tensor<f64>, bias: &[f64], stride: usize, padding: Padding) -> Tensor<f64> {
    let [nb, ic, h, w] = input.shape();
    let [oc, _, kh, kw] = kernels.shape();
    let (pt, pl, pb, pr) = match padding {
        Padding::Valid => (0, 0, 0, 0),
        _ => ((kh - 1) / 2, (kw - 1) / 2, kh - 1 - (kh - 1) / 2, kw - 1 - (kw - 1) / 2),
    };
    let oh = (h + pt + pb - kh) / stride + 1;
    let ow = (w + pl + pr - kw) / stride + 1;
    let mut out = Tensor::zeros([nb, oc, oh, ow]);
    for b in 0..nb {
        for o in 0..oc {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = bias[o];
                    for c in 0..ic {
                        for i in 0..kh {
                            for j in 0..kw {
                                let sy = (y * stride + i) as isize - pt as isize;
                                let sx = (x * stride + j) as isize - pl as isize;
                                let inside = sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w;
                                let v = match padding {
                                    Padding::Reflection => input.at(b, c, mirror(sy, h), mirror(sx, w)),
                                    _ if inside => input.at(b, c, sy as usize, sx as usize),
                                    _ => 0.0,
                                };
                                acc += v * kernels.at(o, c, i, j);
                            }
                        }
                    }
                    let off = out.offset(b, o, y, x);
                    out.data_mut()[off] = acc;
                }
            }
        }
    }
    out
}

pub fn pool_oracle(input: &Tensor<f64>) -> Tensor<f64> {
    let [nb, nc, h, w] = input.shape();
    Tensor::from_fn([nb, nc, h / 2, w / 2], |[b, c, y, x]| {
        let mut m = f64::NEG_INFINITY;
        for dy in 0..2 {
            for dx in 0..2 {
                m = m.max(input.at(b, c, 2 * y + dy, 2 * x + dx));
            }
        }
        m
    })
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Largest relative error between the op's backward pass and central
/// differences of `sum(weights * forward)` with respect to every input element.
pub fn check_op_gradient<O: DifferentiableOp<f64>>(op: &O, inputs: &[Tensor<f64>], step: f64, seed: u64) -> f64 {
    let refs: Vec<&Tensor<f64>> = inputs.iter().collect();
    let out = op.forward(&refs).expect("forward");
    let mut r = rng(seed ^ 0x5eed);
    let weights = Tensor::from_fn(out.shape(), |_| r.random::<f64>() * 2.0 - 1.0);
    let grads = op.backward(&refs, &weights).expect("backward");
    assert_eq!(grads.len(), inputs.len(), "{}: one gradient per input", op.name());
    let objective = |ins: &[Tensor<f64>]| -> f64 {
        let refs: Vec<&Tensor<f64>> = ins.iter().collect();
        let o = op.forward(&refs).expect("forward");
        o.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
    };
    let mut worst: f64 = 0.0;
    for (k, g) in grads.iter().enumerate() {
        assert_eq!(g.shape(), inputs[k].shape(), "{}: gradient shape mirrors input {k}", op.name());
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += step;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= step;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * step);
            worst = worst.max(rel_error(g.data()[i], numeric, 1e-6));
        }
    }
    worst
}

/// Largest relative error of an image-to-scalar gradient against central differences.
pub fn check_image_gradient(
    f: impl Fn(&Image<f64>) -> f64,
    x: &Image<f64>,
    analytic: &Image<f64>,
    step: f64,
    floor: f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        let numeric = (f(&plus) - f(&minus)) / (2.0 * step);
        worst = worst.max(rel_error(analytic.data()[i], numeric, floor));
    }
    worst
}
