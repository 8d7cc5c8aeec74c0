use rand::Rng;

use super::Frame;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::ops::reflect_index;
use crate::scalar::Scalar;

/// Extent to restore after [`pad_to_multiple`]. Padding is added at the
/// bottom and right, so restoring is a top-left crop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropBack {
    pub height: usize,
    pub width: usize,
}

impl CropBack {
    pub fn restore<T: Scalar>(&self, image: &Image<T>) -> Result<Image<T>> {
        image.crop(0, 0, self.height, self.width)
    }
}

fn reflect_extend<T: Scalar>(image: &Image<T>, height: usize, width: usize) -> Image<T> {
    let (h, w) = (image.height(), image.width());
    Image::from_fn(height, width, |r, c| {
        image.get(reflect_index(r as isize, h), reflect_index(c as isize, w))
    })
}

/// Reflect-pads (bottom and right) up to the next multiple of `divisor` in
/// each dimension. A divisor of 0 or 1 leaves the image unchanged.
pub fn pad_to_multiple<T: Scalar>(image: &Image<T>, divisor: usize) -> (Image<T>, CropBack) {
    let record = CropBack {
        height: image.height(),
        width: image.width(),
    };
    let d = divisor.max(1);
    let (h, w) = (image.height().div_ceil(d) * d, image.width().div_ceil(d) * d);
    if (h, w) == (image.height(), image.width()) {
        return (image.clone(), record);
    }
    (reflect_extend(image, h, w), record)
}

/// Uniform top-left offset for an `extent` window inside a frame of `source`
/// extent, after any dimension shorter than the window is reflect-extended.
pub fn crop_offsets<R: Rng>(source: (usize, usize), extent: (usize, usize), rng: &mut R) -> (usize, usize) {
    let slack_h = source.0.saturating_sub(extent.0);
    let slack_w = source.1.saturating_sub(extent.1);
    (rng.random_range(0..=slack_h), rng.random_range(0..=slack_w))
}

/// `extent` window at `(top, left)` of the image reflect-extended at the
/// bottom/right as far as needed.
pub fn window<T: Scalar>(image: &Image<T>, top: usize, left: usize, extent: (usize, usize)) -> Result<Image<T>> {
    let (h, w) = (image.height(), image.width());
    let need = ((top + extent.0).max(h), (left + extent.1).max(w));
    if need == (h, w) {
        return image.crop(top, left, extent.0, extent.1);
    }
    reflect_extend(image, need.0, need.1).crop(top, left, extent.0, extent.1)
}

fn crop_at(frame: &Frame, extent: (usize, usize), top: usize, left: usize) -> Result<Frame> {
    Ok(Frame {
        image: window(&frame.image, top, left, extent)?,
        domain: frame.domain,
        original_extent: frame.original_extent,
    })
}

fn check_extent(extent: (usize, usize)) -> Result<()> {
    if extent.0 == 0 || extent.1 == 0 {
        return Err(Error::InvalidArgument(format!("crop extent must be non-zero, got {extent:?}")));
    }
    Ok(())
}

/// Window of exactly `extent`, taken without resampling. Dimensions shorter
/// than the window are reflect-extended at the bottom/right first.
pub fn random_crop<R: Rng>(frame: &Frame, extent: (usize, usize), rng: &mut R) -> Result<Frame> {
    check_extent(extent)?;
    let (top, left) = crop_offsets(frame.extent(), extent, rng);
    crop_at(frame, extent, top, left)
}

/// Same window taken from two aligned frames.
pub fn random_crop_pair<R: Rng>(a: &Frame, b: &Frame, extent: (usize, usize), rng: &mut R) -> Result<(Frame, Frame)> {
    check_extent(extent)?;
    if a.extent() != b.extent() {
        let (ah, aw) = a.extent();
        let (bh, bw) = b.extent();
        return Err(Error::shape(&[ah, aw], &[bh, bw]));
    }
    let (top, left) = crop_offsets(a.extent(), extent, rng);
    Ok((crop_at(a, extent, top, left)?, crop_at(b, extent, top, left)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ValueDomain;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(h: usize, w: usize) -> Image<f32> {
        Image::from_fn(h, w, |r, c| (r * w + c) as f32)
    }

    #[test]
    fn pad_examples() {
        let (p, cb) = pad_to_multiple(&ramp(500, 500), 16);
        assert_eq!(p.shape(), [512, 512]);
        assert_eq!(cb.restore(&p).unwrap(), ramp(500, 500));
        let (p, _) = pad_to_multiple(&ramp(512, 512), 16);
        assert_eq!(p, ramp(512, 512));
        let (p, _) = pad_to_multiple(&ramp(513, 700), 16);
        assert_eq!(p.shape(), [528, 704]);
    }

    #[test]
    fn crop_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = Frame::new(ramp(400, 600), ValueDomain::Normalized);
        let c = random_crop(&f, (512, 512), &mut rng).unwrap();
        assert_eq!(c.extent(), (512, 512));
        assert_eq!(c.original_extent, (400, 600));
        let f = Frame::new(ramp(512, 512), ValueDomain::Normalized);
        assert_eq!(crop_offsets(f.extent(), (512, 512), &mut rng), (0, 0));
        assert_eq!(random_crop(&f, (512, 512), &mut rng).unwrap().image, f.image);
    }
}
