//! Differentiable primitives over NCHW tensors.
//!
//! Each primitive is a forward function plus a backward function that
//! recomputes whatever it needs from the forward inputs, so callers only keep
//! inputs alive between the two passes. Convolution is cross-correlation
//! (kernels are not flipped).

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Forward/backward contract shared by every primitive. Parameters are passed
/// as ordinary inputs, so `backward` returns one gradient per input, each
/// shaped like its input.
pub trait DifferentiableOp<T: Scalar> {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>>;

    fn backward(&self, inputs: &[&Tensor<T>], grad_output: &Tensor<T>) -> Result<Vec<Tensor<T>>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// No padding; output shrinks by `kernel - 1`.
    Valid,
    /// Zero padding to "same" extent (before stride).
    Zero,
    /// Reflection padding to "same" extent (before stride).
    Reflection,
}

/// Per-edge padding amounts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PadAmounts {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl PadAmounts {
    pub fn same(kernel_h: usize, kernel_w: usize) -> Self {
        let top = (kernel_h - 1) / 2;
        let left = (kernel_w - 1) / 2;
        PadAmounts {
            top,
            bottom: kernel_h - 1 - top,
            left,
            right: kernel_w - 1 - left,
        }
    }

    pub fn is_zero(&self) -> bool {
        *self == PadAmounts::default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "slope")]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Linear,
}

impl Activation {
    pub const LEAKY: Activation = Activation::LeakyRelu(0.2);
}

// ---------------------------------------------------------------------------
// padding

/// Mirror-reflect borders, excluding the edge pixel itself.
pub fn reflection_pad<T: Scalar>(input: &Tensor<T>, pad: PadAmounts) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.shape();
    for (p, dim) in [(pad.top, h), (pad.bottom, h), (pad.left, w), (pad.right, w)] {
        if p >= dim && p > 0 {
            return Err(Error::PadTooLarge { pad: p, dim });
        }
    }
    if pad.is_zero() {
        return Ok(input.clone());
    }
    let (oh, ow) = (h + pad.top + pad.bottom, w + pad.left + pad.right);
    let rows: Vec<usize> = (0..oh).map(|y| reflect_index(y as isize - pad.top as isize, h)).collect();
    let cols: Vec<usize> = (0..ow).map(|x| reflect_index(x as isize - pad.left as isize, w)).collect();
    let mut out = Tensor::zeros([n, c, oh, ow]);
    for b in 0..n {
        for k in 0..c {
            let src = input.plane(b, k);
            let dst = out.plane_mut(b, k);
            for (y, &sy) in rows.iter().enumerate() {
                let srow = &src[sy * w..(sy + 1) * w];
                let drow = &mut dst[y * ow..(y + 1) * ow];
                for (d, &sx) in drow.iter_mut().zip(&cols) {
                    *d = srow[sx];
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of [`reflection_pad`]: every padded position folds back onto its source.
pub fn reflection_pad_backward<T: Scalar>(
    input_shape: [usize; 4],
    pad: PadAmounts,
    grad_output: &Tensor<T>,
) -> Tensor<T> {
    let [n, c, h, w] = input_shape;
    let (oh, ow) = (grad_output.height(), grad_output.width());
    let rows: Vec<usize> = (0..oh).map(|y| reflect_index(y as isize - pad.top as isize, h)).collect();
    let cols: Vec<usize> = (0..ow).map(|x| reflect_index(x as isize - pad.left as isize, w)).collect();
    let mut grad = Tensor::zeros(input_shape);
    for b in 0..n {
        for k in 0..c {
            let src = grad_output.plane(b, k);
            let dst = grad.plane_mut(b, k);
            for (y, &sy) in rows.iter().enumerate() {
                for (x, &sx) in cols.iter().enumerate() {
                    dst[sy * w + sx] += src[y * ow + x];
                }
            }
        }
    }
    grad
}

/// Reflect-101 index extension; indices arbitrarily far outside `[0, n)` fold
/// periodically. A length-1 axis replicates its single sample.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

fn zero_pad<T: Scalar>(input: &Tensor<T>, pad: PadAmounts) -> Tensor<T> {
    if pad.is_zero() {
        return input.clone();
    }
    let [n, c, h, w] = input.shape();
    let (oh, ow) = (h + pad.top + pad.bottom, w + pad.left + pad.right);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    for b in 0..n {
        for k in 0..c {
            let src = input.plane(b, k);
            let dst = out.plane_mut(b, k);
            for y in 0..h {
                let d = (y + pad.top) * ow + pad.left;
                dst[d..d + w].copy_from_slice(&src[y * w..(y + 1) * w]);
            }
        }
    }
    out
}

fn zero_pad_backward<T: Scalar>(input_shape: [usize; 4], pad: PadAmounts, grad_output: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = input_shape;
    let ow = grad_output.width();
    let mut grad = Tensor::zeros(input_shape);
    for b in 0..n {
        for k in 0..c {
            let src = grad_output.plane(b, k);
            let dst = grad.plane_mut(b, k);
            for y in 0..h {
                let s = (y + pad.top) * ow + pad.left;
                dst[y * w..(y + 1) * w].copy_from_slice(&src[s..s + w]);
            }
        }
    }
    grad
}

// ---------------------------------------------------------------------------
// convolution

/// Geometry of one 2D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: Padding,
}

impl ConvSpec {
    pub fn same(padding: Padding) -> Self {
        ConvSpec { stride: 1, padding }
    }

    fn pad_amounts(&self, kh: usize, kw: usize) -> PadAmounts {
        match self.padding {
            Padding::Valid => PadAmounts::default(),
            Padding::Zero | Padding::Reflection => PadAmounts::same(kh, kw),
        }
    }

    /// Output spatial extent for an input of `h x w` and a `kh x kw` kernel.
    pub fn output_extent(&self, h: usize, w: usize, kh: usize, kw: usize) -> Option<(usize, usize)> {
        let p = self.pad_amounts(kh, kw);
        let (ph, pw) = (h + p.top + p.bottom, w + p.left + p.right);
        if ph < kh || pw < kw || self.stride == 0 {
            return None;
        }
        Some(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }
}

fn check_conv<T: Scalar>(input: &Tensor<T>, kernels: &Tensor<T>, bias: &[T], spec: ConvSpec) -> Result<(usize, usize)> {
    let [_, ic, h, w] = input.shape();
    let [oc, kc, kh, kw] = kernels.shape();
    if kc != ic {
        return Err(Error::ChannelMismatch { expected: kc, found: ic });
    }
    if bias.len() != oc {
        return Err(Error::shape(&[oc], &[bias.len()]));
    }
    if spec.stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    spec.output_extent(h, w, kh, kw).ok_or_else(|| {
        Error::InvalidArgument(format!("input {h}x{w} is smaller than kernel {kh}x{kw}"))
    })
}

fn pad_for<T: Scalar>(input: &Tensor<T>, spec: ConvSpec, pad: PadAmounts) -> Result<Tensor<T>> {
    match spec.padding {
        Padding::Valid => Ok(input.clone()),
        Padding::Zero => Ok(zero_pad(input, pad)),
        Padding::Reflection => reflection_pad(input, pad),
    }
}

#[inline]
fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with eight interleaved accumulators; fixed summation order.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let (pa, pb) = (&a[i * 8..i * 8 + 8], &b[i * 8..i * 8 + 8]);
        for k in 0..8 {
            acc[k] += pa[k] * pb[k];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `c += a * b` for row-major `a` (m x p), `b` (p x n), `c` (m x n). Each
/// output accumulates over `p` in increasing order.
fn gemm_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, p: usize, n: usize) {
    const MR: usize = 4;
    const NR: usize = 8;
    let (m4, n8) = (m - m % MR, n - n % NR);
    if m > 64 {
        gemm_acc_tall(a, b, c, m, p, n);
        return;
    }
    let mut panel = vec![T::zero(); p * NR];
    for j in (0..n8).step_by(NR) {
        for r in 0..p {
            panel[r * NR..(r + 1) * NR].copy_from_slice(&b[r * n + j..r * n + j + NR]);
        }
        for i in (0..m4).step_by(MR) {
            let mut acc = [[T::zero(); NR]; MR];
            for (ii, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&c[(i + ii) * n + j..(i + ii) * n + j + NR]);
            }
            for (r, bv) in panel.chunks_exact(NR).enumerate() {
                for (ii, row) in acc.iter_mut().enumerate() {
                    let av = a[(i + ii) * p + r];
                    for (x, &y) in row.iter_mut().zip(bv) {
                        *x += av * y;
                    }
                }
            }
            for (ii, row) in acc.iter().enumerate() {
                c[(i + ii) * n + j..(i + ii) * n + j + NR].copy_from_slice(row);
            }
        }
    }
    for ii in 0..m4 {
        for j in n8..n {
            let mut x = c[ii * n + j];
            for r in 0..p {
                x += a[ii * p + r] * b[r * n + j];
            }
            c[ii * n + j] = x;
        }
    }
    for ii in m4..m {
        let crow = &mut c[ii * n..(ii + 1) * n];
        for r in 0..p {
            axpy(a[ii * p + r], &b[r * n..(r + 1) * n], crow);
        }
    }
}

/// Row-block-outer variant of [`gemm_acc`] for outputs with many rows.
fn gemm_acc_tall<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, p: usize, n: usize) {
    const MR: usize = 4;
    const NR: usize = 8;
    let (m4, n8) = (m - m % MR, n - n % NR);
    for i in (0..m4).step_by(MR) {
        for j in (0..n8).step_by(NR) {
            let mut acc = [[T::zero(); NR]; MR];
            for (ii, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&c[(i + ii) * n + j..(i + ii) * n + j + NR]);
            }
            for r in 0..p {
                let bv = &b[r * n + j..r * n + j + NR];
                for (ii, row) in acc.iter_mut().enumerate() {
                    let av = a[(i + ii) * p + r];
                    for (x, &y) in row.iter_mut().zip(bv) {
                        *x += av * y;
                    }
                }
            }
            for (ii, row) in acc.iter().enumerate() {
                c[(i + ii) * n + j..(i + ii) * n + j + NR].copy_from_slice(row);
            }
        }
        for ii in i..i + MR {
            for j in n8..n {
                let mut x = c[ii * n + j];
                for r in 0..p {
                    x += a[ii * p + r] * b[r * n + j];
                }
                c[ii * n + j] = x;
            }
        }
    }
    for ii in m4..m {
        let crow = &mut c[ii * n..(ii + 1) * n];
        for r in 0..p {
            axpy(a[ii * p + r], &b[r * n..(r + 1) * n], crow);
        }
    }
}

/// Upper bound on the im2col buffer, in elements.
const COLUMN_BUDGET: usize = 1 << 16;

/// Geometry shared by the im2col forward and backward passes.
#[derive(Clone, Copy)]
struct Im2Col {
    ic: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pw: usize,
    ow: usize,
}

impl Im2Col {
    fn rows(&self) -> usize {
        self.ic * self.kh * self.kw
    }

    /// Output rows per tile so the column buffer stays within budget.
    fn tile_rows(&self, oh: usize) -> usize {
        (COLUMN_BUDGET / (self.rows() * self.ow).max(1)).clamp(1, oh.max(1))
    }

    /// Columns for output rows `[oy0, oy1)`: one row per `(i, ky, kx)`,
    /// one column per output pixel.
    fn gather<T: Scalar>(&self, padded: &Tensor<T>, b: usize, oy0: usize, oy1: usize, cols: &mut [T]) {
        let len = (oy1 - oy0) * self.ow;
        let mut r = 0;
        for i in 0..self.ic {
            let src = padded.plane(b, i);
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let dst = &mut cols[r * len..(r + 1) * len];
                    for (t, oy) in (oy0..oy1).enumerate() {
                        let row = (oy * self.stride + ky) * self.pw + kx;
                        let d = &mut dst[t * self.ow..(t + 1) * self.ow];
                        if self.stride == 1 {
                            d.copy_from_slice(&src[row..row + self.ow]);
                        } else {
                            for (ox, v) in d.iter_mut().enumerate() {
                                *v = src[row + ox * self.stride];
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
    }

    /// Adds column gradients back onto the padded input gradient.
    fn scatter<T: Scalar>(&self, cols: &[T], grad_p: &mut Tensor<T>, b: usize, oy0: usize, oy1: usize) {
        let len = (oy1 - oy0) * self.ow;
        let mut r = 0;
        for i in 0..self.ic {
            let dst = grad_p.plane_mut(b, i);
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let src = &cols[r * len..(r + 1) * len];
                    for (t, oy) in (oy0..oy1).enumerate() {
                        let row = (oy * self.stride + ky) * self.pw + kx;
                        let g = &src[t * self.ow..(t + 1) * self.ow];
                        if self.stride == 1 {
                            axpy(T::one(), g, &mut dst[row..row + self.ow]);
                        } else {
                            for (ox, &gv) in g.iter().enumerate() {
                                dst[row + ox * self.stride] += gv;
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
    }
}

/// 2D cross-correlation. `kernels` is `(out_c, in_c, kh, kw)`.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, kernels: &Tensor<T>, bias: &[T], spec: ConvSpec) -> Result<Tensor<T>> {
    let (oh, ow) = check_conv(input, kernels, bias, spec)?;
    let [n, ic, _, _] = input.shape();
    let [oc, _, kh, kw] = kernels.shape();
    let padded = pad_for(input, spec, spec.pad_amounts(kh, kw))?;
    let geo = Im2Col {
        ic,
        kh,
        kw,
        stride: spec.stride,
        pw: padded.width(),
        ow,
    };
    let k = geo.rows();
    let kdata = kernels.data();
    let mut out = Tensor::zeros([n, oc, oh, ow]);
    let tile = geo.tile_rows(oh);
    let mut cols = vec![T::zero(); k * tile * ow];
    let mut acc = vec![T::zero(); oc * tile * ow];
    for b in 0..n {
        let mut oy0 = 0;
        while oy0 < oh {
            let oy1 = (oy0 + tile).min(oh);
            let len = (oy1 - oy0) * ow;
            geo.gather(&padded, b, oy0, oy1, &mut cols);
            let acc = &mut acc[..oc * len];
            for (o, chunk) in acc.chunks_exact_mut(len).enumerate() {
                chunk.iter_mut().for_each(|v| *v = bias[o]);
            }
            gemm_acc(kdata, &cols[..k * len], acc, oc, k, len);
            for (o, chunk) in acc.chunks_exact(len).enumerate() {
                out.plane_mut(b, o)[oy0 * ow..oy1 * ow].copy_from_slice(chunk);
            }
            oy0 = oy1;
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, kernels and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    spec: ConvSpec,
    grad_output: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    let [n, ic, _, _] = input.shape();
    let [oc, _, kh, kw] = kernels.shape();
    let (oh, ow) = check_conv(input, kernels, &vec![T::zero(); oc], spec)?;
    if grad_output.shape() != [n, oc, oh, ow] {
        return Err(Error::shape(&[n, oc, oh, ow], &grad_output.shape()));
    }
    let pad = spec.pad_amounts(kh, kw);
    let padded = pad_for(input, spec, pad)?;
    let [_, _, ph, pw] = padded.shape();
    let geo = Im2Col {
        ic,
        kh,
        kw,
        stride: spec.stride,
        pw,
        ow,
    };
    let k = geo.rows();
    let kdata = kernels.data();

    let mut grad_bias = vec![T::zero(); oc];
    for b in 0..n {
        for (o, gb) in grad_bias.iter_mut().enumerate() {
            *gb += grad_output.plane(b, o).iter().copied().sum::<T>();
        }
    }

    let mut grad_k = Tensor::zeros(kernels.shape());
    let mut grad_p = Tensor::zeros([n, ic, ph, pw]);
    let tile = geo.tile_rows(oh);
    let mut cols = vec![T::zero(); k * tile * ow];
    let mut gcols = vec![T::zero(); k * tile * ow];
    let mut gtile = vec![T::zero(); oc * tile * ow];
    let mut kt = vec![T::zero(); k * oc];
    for o in 0..oc {
        for r in 0..k {
            kt[r * oc + o] = kdata[o * k + r];
        }
    }
    for b in 0..n {
        let mut oy0 = 0;
        while oy0 < oh {
            let oy1 = (oy0 + tile).min(oh);
            let len = (oy1 - oy0) * ow;
            geo.gather(&padded, b, oy0, oy1, &mut cols);
            let gk = grad_k.data_mut();
            for o in 0..oc {
                let g = &grad_output.plane(b, o)[oy0 * ow..oy1 * ow];
                for r in 0..k {
                    gk[o * k + r] += dot(g, &cols[r * len..(r + 1) * len]);
                }
            }
            let gt = &mut gtile[..oc * len];
            for (o, chunk) in gt.chunks_exact_mut(len).enumerate() {
                chunk.copy_from_slice(&grad_output.plane(b, o)[oy0 * ow..oy1 * ow]);
            }
            let gc = &mut gcols[..k * len];
            gc.iter_mut().for_each(|v| *v = T::zero());
            gemm_acc(&kt, gt, gc, k, oc, len);
            geo.scatter(gc, &mut grad_p, b, oy0, oy1);
            oy0 = oy1;
        }
    }

    let grad_in = match spec.padding {
        Padding::Valid => grad_p,
        Padding::Zero => zero_pad_backward(input.shape(), pad, &grad_p),
        Padding::Reflection => reflection_pad_backward(input.shape(), pad, &grad_p),
    };
    Ok((grad_in, grad_k, grad_bias))
}

// ---------------------------------------------------------------------------
// pooling and resampling

pub fn max_pool_2x2<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::OddDimensions { height: h, width: w });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    for b in 0..n {
        for k in 0..c {
            let src = input.plane(b, k);
            let dst = out.plane_mut(b, k);
            for y in 0..oh {
                for x in 0..ow {
                    let i = 2 * y * w + 2 * x;
                    dst[y * ow + x] = src[i].max(src[i + 1]).max(src[i + w].max(src[i + w + 1]));
                }
            }
        }
    }
    Ok(out)
}

/// Routes each pooled gradient to the first maximal element of its block
/// (row-major scan order).
pub fn max_pool_2x2_backward<T: Scalar>(input: &Tensor<T>, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::OddDimensions { height: h, width: w });
    }
    let (oh, ow) = (h / 2, w / 2);
    if grad_output.shape() != [n, c, oh, ow] {
        return Err(Error::shape(&[n, c, oh, ow], &grad_output.shape()));
    }
    let mut grad = Tensor::zeros(input.shape());
    for b in 0..n {
        for k in 0..c {
            let src = input.plane(b, k);
            let g = grad_output.plane(b, k);
            let dst = grad.plane_mut(b, k);
            for y in 0..oh {
                for x in 0..ow {
                    let i = 2 * y * w + 2 * x;
                    let mut best = i;
                    for j in [i + 1, i + w, i + w + 1] {
                        if src[j] > src[best] {
                            best = j;
                        }
                    }
                    dst[best] += g[y * ow + x];
                }
            }
        }
    }
    Ok(grad)
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample_2x2<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = input.shape();
    let ow = 2 * w;
    let mut out = Tensor::zeros([n, c, 2 * h, ow]);
    for b in 0..n {
        for k in 0..c {
            let src = input.plane(b, k);
            let dst = out.plane_mut(b, k);
            for y in 0..h {
                for x in 0..w {
                    let v = src[y * w + x];
                    let i = 2 * y * ow + 2 * x;
                    dst[i] = v;
                    dst[i + 1] = v;
                    dst[i + ow] = v;
                    dst[i + ow + 1] = v;
                }
            }
        }
    }
    out
}

/// Gradient of [`upsample_2x2`]: each 2x2 block of the upstream gradient is summed.
pub fn upsample_2x2_backward<T: Scalar>(grad_output: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h2, w2] = grad_output.shape();
    if h2 % 2 != 0 || w2 % 2 != 0 {
        return Err(Error::OddDimensions { height: h2, width: w2 });
    }
    let (h, w) = (h2 / 2, w2 / 2);
    let mut grad = Tensor::zeros([n, c, h, w]);
    for b in 0..n {
        for k in 0..c {
            let src = grad_output.plane(b, k);
            let dst = grad.plane_mut(b, k);
            for y in 0..h {
                for x in 0..w {
                    let i = 2 * y * w2 + 2 * x;
                    dst[y * w + x] = src[i] + src[i + 1] + src[i + w2] + src[i + w2 + 1];
                }
            }
        }
    }
    Ok(grad)
}

// ---------------------------------------------------------------------------
// channel concatenation

pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, ca, h, w] = a.shape();
    let [nb, cb, hb, wb] = b.shape();
    if n != nb || h != hb || w != wb {
        return Err(Error::shape(&a.shape(), &b.shape()));
    }
    let mut out = Tensor::zeros([n, ca + cb, h, w]);
    for i in 0..n {
        for k in 0..ca {
            out.plane_mut(i, k).copy_from_slice(a.plane(i, k));
        }
        for k in 0..cb {
            out.plane_mut(i, ca + k).copy_from_slice(b.plane(i, k));
        }
    }
    Ok(out)
}

/// Splits an upstream gradient into the parts for the first `channels_a`
/// channels and the remainder.
pub fn concat_channels_backward<T: Scalar>(grad_output: &Tensor<T>, channels_a: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let total = grad_output.channels();
    Ok((
        grad_output.slice_channels(0, channels_a)?,
        grad_output.slice_channels(channels_a, total - channels_a)?,
    ))
}

// ---------------------------------------------------------------------------
// activations

pub fn activation<T: Scalar>(input: &Tensor<T>, kind: Activation) -> Tensor<T> {
    match kind {
        Activation::Linear => input.clone(),
        Activation::Relu => input.map(|v| v.max(T::zero())),
        Activation::LeakyRelu(slope) => {
            let s = T::of(slope);
            input.map(|v| if v > T::zero() { v } else { s * v })
        }
    }
}

pub fn activation_backward<T: Scalar>(input: &Tensor<T>, kind: Activation, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != grad_output.shape() {
        return Err(Error::shape(&input.shape(), &grad_output.shape()));
    }
    let slope = match kind {
        Activation::Linear => return Ok(grad_output.clone()),
        Activation::Relu => T::zero(),
        Activation::LeakyRelu(s) => T::of(s),
    };
    let data = input
        .data()
        .iter()
        .zip(grad_output.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { slope * g })
        .collect();
    Tensor::new(input.shape(), data)
}

// ---------------------------------------------------------------------------
// batch normalization

pub const BATCH_NORM_EPS: f64 = 1e-5;

/// Per-channel batch mean and biased variance over `(n, h, w)`.
pub fn batch_stats<T: Scalar>(input: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let [n, c, h, w] = input.shape();
    let count = T::of((n * h * w) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for k in 0..c {
        let mut s = T::zero();
        for b in 0..n {
            s += input.plane(b, k).iter().copied().sum::<T>();
        }
        let m = s / count;
        let mut v = T::zero();
        for b in 0..n {
            v += input.plane(b, k).iter().map(|&x| (x - m) * (x - m)).sum::<T>();
        }
        mean[k] = m;
        var[k] = v / count;
    }
    (mean, var)
}

/// Affine normalization with supplied statistics:
/// `gamma * (x - mean) / sqrt(var + eps) + beta`.
pub fn batch_norm_apply<T: Scalar>(input: &Tensor<T>, mean: &[T], var: &[T], gamma: &[T], beta: &[T]) -> Tensor<T> {
    let [n, c, _, _] = input.shape();
    let eps = T::of(BATCH_NORM_EPS);
    let mut out = input.clone();
    for k in 0..c {
        let scale = gamma[k] / (var[k] + eps).sqrt();
        let shift = beta[k] - mean[k] * scale;
        for b in 0..n {
            out.plane_mut(b, k).iter_mut().for_each(|v| *v = *v * scale + shift);
        }
    }
    out
}

/// Training-mode batch normalization gradients: `(d_input, d_gamma, d_beta)`.
pub fn batch_norm_backward<T: Scalar>(
    input: &Tensor<T>,
    gamma: &[T],
    grad_output: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    if input.shape() != grad_output.shape() {
        return Err(Error::shape(&input.shape(), &grad_output.shape()));
    }
    let [n, c, h, w] = input.shape();
    let count = T::of((n * h * w) as f64);
    let eps = T::of(BATCH_NORM_EPS);
    let (mean, var) = batch_stats(input);
    let mut grad = Tensor::zeros(input.shape());
    let mut d_gamma = vec![T::zero(); c];
    let mut d_beta = vec![T::zero(); c];
    for k in 0..c {
        let inv_std = T::one() / (var[k] + eps).sqrt();
        let (mut sum_g, mut sum_gx) = (T::zero(), T::zero());
        for b in 0..n {
            for (&x, &g) in input.plane(b, k).iter().zip(grad_output.plane(b, k)) {
                sum_g += g;
                sum_gx += g * (x - mean[k]) * inv_std;
            }
        }
        d_beta[k] = sum_g;
        d_gamma[k] = sum_gx;
        let scale = gamma[k] * inv_std / count;
        for b in 0..n {
            let xs = input.plane(b, k);
            let gs = grad_output.plane(b, k);
            for ((d, &x), &g) in grad.plane_mut(b, k).iter_mut().zip(xs).zip(gs) {
                let xhat = (x - mean[k]) * inv_std;
                *d = scale * (count * g - sum_g - xhat * sum_gx);
            }
        }
    }
    Ok((grad, d_gamma, d_beta))
}

/// Gradient of [`batch_norm_apply`] with respect to its input, with fixed statistics.
pub fn batch_norm_apply_backward<T: Scalar>(var: &[T], gamma: &[T], grad_output: &Tensor<T>) -> Tensor<T> {
    let [n, c, _, _] = grad_output.shape();
    let eps = T::of(BATCH_NORM_EPS);
    let mut grad = grad_output.clone();
    for k in 0..c {
        let scale = gamma[k] / (var[k] + eps).sqrt();
        for b in 0..n {
            grad.plane_mut(b, k).iter_mut().for_each(|v| *v *= scale);
        }
    }
    grad
}

// ---------------------------------------------------------------------------
// op objects for uniform gradient checking

fn vector_of<T: Scalar>(t: &Tensor<T>) -> &[T] {
    t.data()
}

fn as_vector_tensor<T: Scalar>(v: Vec<T>) -> Tensor<T> {
    let n = v.len();
    Tensor::new([n, 1, 1, 1], v).expect("non-empty vector")
}

fn expect_inputs<T>(op: &str, inputs: &[&Tensor<T>], n: usize) -> Result<()> {
    if inputs.len() != n {
        return Err(Error::InvalidArgument(format!("{op} expects {n} inputs, got {}", inputs.len())));
    }
    Ok(())
}

/// Inputs: `[input, kernels, bias]` with bias shaped `(out_c, 1, 1, 1)`.
#[derive(Clone, Copy, Debug)]
pub struct Conv2dOp(pub ConvSpec);

impl<T: Scalar> DifferentiableOp<T> for Conv2dOp {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        expect_inputs("conv2d", inputs, 3)?;
        conv2d(inputs[0], inputs[1], vector_of(inputs[2]), self.0)
    }

    fn backward(&self, inputs: &[&Tensor<T>], grad_output: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        expect_inputs("conv2d", inputs, 3)?;
        let (gi, gk, gb) = conv2d_backward(inputs[0], inputs[1], self.0, grad_output)?;
        Ok(vec![gi, gk, as_vector_tensor(gb)])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MaxPoolOp;

impl<T: Scalar> DifferentiableOp<T> for MaxPoolOp {
    fn name(&self) -> &'static str {
        "max_pool_2x2"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        expect_inputs("max_pool_2x2", inputs, 1)?;
        max_pool_2x2(inputs[0])
    }

    fn backward(&self, inputs: &[&Tensor<T>], grad_output: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        Ok(vec![max_pool_2x2_backward(inputs[0], grad_output)?])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct UpsampleOp;

impl<T: Scalar> DifferentiableOp<T> for UpsampleOp {
    fn name(&self) -> &'static str {
        "upsample_2x2"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        expect_inputs("upsample_2x2", inputs, 1)?;
        Ok(upsample_2x2(inputs[0]))
    }

    fn backward(&self, _inputs: &[&Tensor<T>], grad_output: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        Ok(vec![upsample_2x2_backward(grad_output)?])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConcatOp;

impl<T: Scalar> DifferentiableOp<T> for ConcatOp {
    fn name(&self) -> &'static str {
        "concat_channels"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        expect_inputs("concat_channels", inputs, 2)?;
        concat_channels(inputs[0], inputs[1])
    }

    fn backward(&self, inputs: &[&Tensor<T>], grad_output: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let (a, b) = concat_channels_backward(grad_output, inputs[0].channels())?;
        Ok(vec![a, b])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ActivationOp(pub Activation);

impl<T: Scalar> DifferentiableOp<T> for ActivationOp {
    fn name(&self) -> &'static str {
        "activation"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        expect_inputs("activation", inputs, 1)?;
        Ok(activation(inputs[0], self.0))
    }

    fn backward(&self, inputs: &[&Tensor<T>], grad_output: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        Ok(vec![activation_backward(inputs[0], self.0, grad_output)?])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ReflectionPadOp(pub PadAmounts);

impl<T: Scalar> DifferentiableOp<T> for ReflectionPadOp {
    fn name(&self) -> &'static str {
        "reflection_pad"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        expect_inputs("reflection_pad", inputs, 1)?;
        reflection_pad(inputs[0], self.0)
    }

    fn backward(&self, inputs: &[&Tensor<T>], grad_output: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        Ok(vec![reflection_pad_backward(inputs[0].shape(), self.0, grad_output)])
    }
}

/// Training-mode batch normalization. Inputs: `[input, gamma, beta]`, with
/// gamma and beta shaped `(channels, 1, 1, 1)`.
#[derive(Clone, Copy, Debug)]
pub struct BatchNormOp;

impl<T: Scalar> DifferentiableOp<T> for BatchNormOp {
    fn name(&self) -> &'static str {
        "batch_norm"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        expect_inputs("batch_norm", inputs, 3)?;
        let (mean, var) = batch_stats(inputs[0]);
        Ok(batch_norm_apply(inputs[0], &mean, &var, inputs[1].data(), inputs[2].data()))
    }

    fn backward(&self, inputs: &[&Tensor<T>], grad_output: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let (gi, gg, gb) = batch_norm_backward(inputs[0], inputs[1].data(), grad_output)?;
        Ok(vec![gi, as_vector_tensor(gg), as_vector_tensor(gb)])
    }
}
