use super::{Frame, ValueDomain};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::ops::reflect_index;

/// Display window in dB; everything below the lower bound maps to black.
pub const ORACLE_CLIP_DB: (f64, f64) = (-80.0, 0.0);
pub const ORACLE_GAMMA: f64 = 0.7;

fn median3x3(image: &Image<f32>) -> Image<f32> {
    let (h, w) = (image.height(), image.width());
    Image::from_fn(h, w, |r, c| {
        let mut win = [0f32; 9];
        let mut k = 0;
        for dr in -1..=1isize {
            for dc in -1..=1isize {
                win[k] = image.get(
                    reflect_index(r as isize + dr, h),
                    reflect_index(c as isize + dc, w),
                );
                k += 1;
            }
        }
        win.sort_unstable_by(f32::total_cmp);
        win[4]
    })
}

/// Fixed reference post-processor: clip to the display window, 3x3 median
/// with reflected borders, map the window onto `[0, 1]`, then gamma.
pub fn oracle_postprocess(frame: &Frame) -> Result<Frame> {
    if !matches!(frame.domain, ValueDomain::Decibels { .. }) {
        return Err(Error::InvalidArgument(
            "reference post-processor expects a decibel frame, got a normalized one".into(),
        ));
    }
    let (lo, hi) = (ORACLE_CLIP_DB.0 as f32, ORACLE_CLIP_DB.1 as f32);
    let clipped = frame.image.map(|v| v.clamp(lo, hi));
    let smoothed = median3x3(&clipped);
    let gamma = ORACLE_GAMMA as f32;
    let image = smoothed.map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0).powf(gamma));
    Ok(Frame {
        image,
        domain: ValueDomain::Normalized,
        original_extent: frame.original_extent,
    })
}

/// Inverse of the tone map and window: a normalized oracle output back in dB.
pub fn oracle_to_decibels(frame: &Frame) -> Result<Frame> {
    if frame.domain != ValueDomain::Normalized {
        return Err(Error::InvalidArgument("expected a normalized frame".into()));
    }
    let (lo, hi) = ORACLE_CLIP_DB;
    let inv = 1.0 / ORACLE_GAMMA;
    let image = frame
        .image
        .map(|v| (lo + (hi - lo) * (v.clamp(0.0, 1.0) as f64).powf(inv)) as f32);
    Ok(Frame {
        image,
        domain: ValueDomain::RAW,
        original_extent: frame.original_extent,
    })
}
