use std::path::Path;

use super::{oracle_postprocess, read_cineloop, read_corpus, Cineloop, CorpusManifest, GroundTruth, SplitManifest};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

/// A corpus directory in memory: raw loops in manifest order, plus the
/// stored processed counterparts when ground truth is paired.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub raw: Vec<Cineloop>,
    /// Parallel to `raw`; empty for oracle ground truth.
    pub processed: Vec<Cineloop>,
}

impl Corpus {
    /// Reads every loop the manifest names and reports all problems at once.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = read_corpus(dir)?;
        let mut problems = Vec::new();
        let mut raw = Vec::new();
        let mut processed = Vec::new();
        if manifest.entries.is_empty() {
            problems.push("manifest lists no cineloops".to_string());
        }
        for e in &manifest.entries {
            let r = match read_cineloop(dir, &e.raw) {
                Ok(l) => l,
                Err(err) => {
                    problems.push(format!("{}: {err}", e.raw));
                    continue;
                }
            };
            match (manifest.ground_truth, &e.processed) {
                (GroundTruth::Oracle, None) => {}
                (GroundTruth::Oracle, Some(p)) => problems.push(format!("{}: oracle corpus names processed loop {p}", e.raw)),
                (GroundTruth::Paired, None) => problems.push(format!("{}: paired corpus entry lacks a processed loop", e.raw)),
                (GroundTruth::Paired, Some(p)) => match read_cineloop(dir, p) {
                    Ok(l) if l.frames.len() != r.frames.len() || l.extent() != r.extent() => problems.push(format!(
                        "{}: processed loop {p} has {} frames of {:?}, raw has {} of {:?}",
                        e.raw,
                        l.frames.len(),
                        l.extent(),
                        r.frames.len(),
                        r.extent()
                    )),
                    Ok(l) => processed.push(l),
                    Err(err) => problems.push(format!("{p}: {err}")),
                },
            }
            raw.push(r);
        }
        if problems.is_empty() {
            Ok(Corpus { manifest, raw, processed })
        } else {
            Err(Error::Corpus(problems))
        }
    }

    pub fn ids(&self) -> Vec<String> {
        self.raw.iter().map(|l| l.id.clone()).collect()
    }

    fn position(&self, id: &str) -> Result<usize> {
        self.raw
            .iter()
            .position(|l| l.id == id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown cineloop {id}")))
    }

    /// Normalized inputs and ground-truth frames of one loop.
    pub fn loop_pairs<T: Scalar>(&self, id: &str) -> Result<(Vec<Image<T>>, Vec<Image<T>>)> {
        let i = self.position(id)?;
        let inputs = self.raw[i].frames.iter().map(|f| f.normalized().cast()).collect();
        let targets = match self.manifest.ground_truth {
            GroundTruth::Oracle => self.raw[i]
                .frames
                .iter()
                .map(|f| Ok(oracle_postprocess(f)?.image.cast()))
                .collect::<Result<_>>()?,
            GroundTruth::Paired => self.processed[i].frames.iter().map(|f| f.normalized().cast()).collect(),
        };
        Ok((inputs, targets))
    }

    /// Concatenated pairs of the loops in `ids`, in order.
    pub fn pairs<T: Scalar>(&self, ids: &[String]) -> Result<(Vec<Image<T>>, Vec<Image<T>>)> {
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for id in ids {
            let (x, y) = self.loop_pairs(id)?;
            xs.extend(x);
            ys.extend(y);
        }
        Ok((xs, ys))
    }

    /// Raw frames of the raw-only loops and targets of the processed-only loops.
    pub fn unpaired<T: Scalar>(&self, split: &SplitManifest) -> Result<(Vec<Image<T>>, Vec<Image<T>>)> {
        split.validate()?;
        let (raw, _) = self.pairs::<T>(&split.raw_only)?;
        let (_, processed) = self.pairs::<T>(&split.processed_only)?;
        Ok((raw, processed))
    }
}
