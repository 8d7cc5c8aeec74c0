//! Frames and cineloops, leakage-safe splitting, crop/pad preparation, the
//! synthetic speckle corpus, the reference post-processor, and the on-disk
//! container format.

mod container;
mod corpus;
mod oracle;
mod prep;
mod split;
mod synth;

pub use container::{
    ingest_external, read_cineloop, read_corpus, write_cineloop, write_corpus, CineloopHeader, CorpusEntry, CorpusManifest,
    GroundTruth, CONTAINER_VERSION,
};
pub(crate) use container::write_atomic;
pub use corpus::Corpus;
pub use oracle::{oracle_postprocess, oracle_to_decibels, ORACLE_CLIP_DB, ORACLE_GAMMA};
pub use prep::{crop_offsets, pad_to_multiple, random_crop, random_crop_pair, window, CropBack};
pub use split::{make_unpaired_groups, split_by_cineloop, unpaired_epoch, FrameRef, SplitManifest};
pub use synth::{log_compress, synth_cineloop, synth_envelopes, Lesion, PhantomSpec, RAW_FLOOR_DB};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueDomain {
    Decibels { lo: f64, hi: f64 },
    Normalized,
}

impl ValueDomain {
    pub const RAW: ValueDomain = ValueDomain::Decibels {
        lo: RAW_FLOOR_DB,
        hi: 0.0,
    };

    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            ValueDomain::Decibels { lo, hi } => (lo, hi),
            ValueDomain::Normalized => (0.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ValueDomain::Decibels { lo, hi } = *self {
            if !(lo < hi) {
                return Err(Error::InvalidArgument(format!("decibel domain needs lo < hi, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub image: Image<f32>,
    pub domain: ValueDomain,
    /// Extent of the source frame before any crop or pad.
    pub original_extent: (usize, usize),
}

impl Frame {
    pub fn new(image: Image<f32>, domain: ValueDomain) -> Self {
        let original_extent = (image.height(), image.width());
        Frame {
            image,
            domain,
            original_extent,
        }
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.image.height(), self.image.width())
    }

    /// Index of the first pixel outside the value domain, if any.
    pub fn first_out_of_domain(&self) -> Option<usize> {
        let (lo, hi) = self.domain.bounds();
        self.image
            .data()
            .iter()
            .position(|&v| !v.is_finite() || (v as f64) < lo || (v as f64) > hi)
    }

    /// Affine map of a decibel frame onto `[0, 1]`; normalized frames pass through.
    pub fn normalized(&self) -> Image<f32> {
        match self.domain {
            ValueDomain::Normalized => self.image.clone(),
            ValueDomain::Decibels { lo, hi } => {
                let span = (hi - lo) as f32;
                let lo = lo as f32;
                self.image.map(|v| ((v - lo) / span).clamp(0.0, 1.0))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Fetal,
    Liver,
    Phantom,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cineloop {
    pub id: String,
    pub frames: Vec<Frame>,
    pub scanner: String,
    pub target: Target,
    pub seed: Option<u64>,
}

impl Cineloop {
    pub fn validate(&self) -> Result<()> {
        let first = self
            .frames
            .first()
            .ok_or_else(|| Error::Format(format!("cineloop {} has no frames", self.id)))?;
        first.domain.validate()?;
        for (i, f) in self.frames.iter().enumerate() {
            if f.extent() != first.extent() || f.domain != first.domain {
                return Err(Error::Format(format!(
                    "cineloop {} frame {i} differs in extent or domain from frame 0",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn extent(&self) -> (usize, usize) {
        self.frames[0].extent()
    }
}

/// Normalized raw frames and their reference post-processed counterparts
/// for the loops named in `ids`, in order.
pub fn oracle_pairs<T: crate::scalar::Scalar>(loops: &[Cineloop], ids: &[String]) -> Result<(Vec<Image<T>>, Vec<Image<T>>)> {
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for id in ids {
        let l = loops
            .iter()
            .find(|l| &l.id == id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown cineloop {id}")))?;
        for f in &l.frames {
            inputs.push(f.normalized().cast());
            targets.push(oracle_postprocess(f)?.image.cast());
        }
    }
    Ok((inputs, targets))
}

/// Raw frames from the raw-only loops and reference outputs from the
/// processed-only loops; no loop contributes to both.
pub fn oracle_unpaired<T: crate::scalar::Scalar>(
    loops: &[Cineloop],
    manifest: &SplitManifest,
) -> Result<(Vec<Image<T>>, Vec<Image<T>>)> {
    manifest.validate()?;
    let (raw, _) = oracle_pairs::<T>(loops, &manifest.raw_only)?;
    let (_, processed) = oracle_pairs::<T>(loops, &manifest.processed_only)?;
    Ok((raw, processed))
}
