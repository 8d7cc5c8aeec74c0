use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cineloop-level assignment to train/test, and (for unpaired training) of
/// train loops to a raw-only and a processed-only group.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub test: Vec<String>,
    #[serde(default)]
    pub raw_only: Vec<String>,
    #[serde(default)]
    pub processed_only: Vec<String>,
}

impl SplitManifest {
    pub fn validate(&self) -> Result<()> {
        let train: BTreeSet<&String> = self.train.iter().collect();
        let test: BTreeSet<&String> = self.test.iter().collect();
        if let Some(id) = train.intersection(&test).next() {
            return Err(Error::Leakage(format!("cineloop {id} is in both train and test")));
        }
        if self.raw_only.is_empty() && self.processed_only.is_empty() {
            return Ok(());
        }
        let raw: BTreeSet<&String> = self.raw_only.iter().collect();
        let processed: BTreeSet<&String> = self.processed_only.iter().collect();
        if let Some(id) = raw.intersection(&processed).next() {
            return Err(Error::Leakage(format!("cineloop {id} is in both unpaired groups")));
        }
        let union: BTreeSet<&String> = raw.union(&processed).copied().collect();
        if union != train {
            return Err(Error::Leakage("unpaired groups do not partition the training set".into()));
        }
        Ok(())
    }

    pub fn is_test(&self, id: &str) -> bool {
        self.test.iter().any(|t| t == id)
    }

    pub fn is_train(&self, id: &str) -> bool {
        self.train.iter().any(|t| t == id)
    }

    /// Frame totals `(train, test)` given a per-loop frame count.
    pub fn frame_totals(&self, frames_of: impl Fn(&str) -> usize) -> (usize, usize) {
        (
            self.train.iter().map(|id| frames_of(id)).sum(),
            self.test.iter().map(|id| frames_of(id)).sum(),
        )
    }
}

/// Assigns whole cineloops to train or test. The test share is
/// `round(n * test_fraction)`, kept within `[1, n - 1]`.
pub fn split_by_cineloop(ids: &[String], test_fraction: f64, seed: u64) -> Result<SplitManifest> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let unique: BTreeSet<&String> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(Error::InvalidArgument("cineloop ids must be unique".into()));
    }
    if ids.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 cineloops to split, got {}", ids.len())));
    }
    let mut order: Vec<String> = unique.into_iter().cloned().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = order.len();
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut test = order.split_off(n - n_test);
    order.sort();
    test.sort();
    Ok(SplitManifest {
        train: order,
        test,
        raw_only: Vec::new(),
        processed_only: Vec::new(),
    })
}

/// Splits the training loops into two disjoint halves: one contributes only
/// raw frames, the other only processed frames.
pub fn make_unpaired_groups(manifest: &SplitManifest, seed: u64) -> Result<SplitManifest> {
    if manifest.train.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 training cineloops for unpaired groups, got {}",
            manifest.train.len()
        )));
    }
    let mut order = manifest.train.clone();
    order.sort();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let half = order.len() / 2;
    let mut processed = order.split_off(half);
    order.sort();
    processed.sort();
    let out = SplitManifest {
        train: manifest.train.clone(),
        test: manifest.test.clone(),
        raw_only: order,
        processed_only: processed,
    };
    out.validate()?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FrameRef {
    pub loop_id: String,
    pub index: usize,
}

/// One shuffled epoch of each unpaired stream: raw frames from the raw-only
/// loops and processed frames from the processed-only loops.
pub fn unpaired_epoch(
    manifest: &SplitManifest,
    frames_of: impl Fn(&str) -> usize,
    seed: u64,
) -> Result<(Vec<FrameRef>, Vec<FrameRef>)> {
    manifest.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stream = |ids: &[String]| {
        let mut refs: Vec<FrameRef> = ids
            .iter()
            .flat_map(|id| {
                (0..frames_of(id)).map(move |index| FrameRef {
                    loop_id: id.clone(),
                    index,
                })
            })
            .collect();
        refs.shuffle(&mut rng);
        refs
    };
    let raw = stream(&manifest.raw_only);
    let processed = stream(&manifest.processed_only);
    Ok((raw, processed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("loop{i:04}")).collect()
    }

    #[test]
    fn ten_loops_split_eight_two() {
        let m = split_by_cineloop(&ids(10), 0.2, 7).unwrap();
        assert_eq!((m.train.len(), m.test.len()), (8, 2));
        m.validate().unwrap();
        assert_eq!(m, split_by_cineloop(&ids(10), 0.2, 7).unwrap());
    }

    #[test]
    fn split_rejects_bad_fraction_and_tiny_corpus() {
        assert!(split_by_cineloop(&ids(10), 0.0, 1).is_err());
        assert!(split_by_cineloop(&ids(10), 1.0, 1).is_err());
        assert!(split_by_cineloop(&ids(1), 0.5, 1).is_err());
    }

    #[test]
    fn unpaired_groups_are_disjoint_halves() {
        let m = split_by_cineloop(&ids(10), 0.2, 3).unwrap();
        let g = make_unpaired_groups(&m, 11).unwrap();
        assert_eq!((g.raw_only.len(), g.processed_only.len()), (4, 4));
        assert_eq!(g, make_unpaired_groups(&m, 11).unwrap());
        let tiny = SplitManifest {
            train: ids(1),
            test: vec!["x".into()],
            ..Default::default()
        };
        assert!(make_unpaired_groups(&tiny, 0).is_err());
    }

    #[test]
    fn clinical_scale_bookkeeping_is_representable() {
        // 1500 loops whose frame counts total 30691 train / 8509 test frames.
        let all = ids(1500);
        let train: Vec<String> = all[..1200].to_vec();
        let test: Vec<String> = all[1200..].to_vec();
        let frames = |id: &str| -> usize {
            let i: usize = id[4..].parse().unwrap();
            if i < 1200 {
                // 30691 = 1200 * 25 + 691
                25 + usize::from(i < 691)
            } else {
                // 8509 = 300 * 28 + 109
                28 + usize::from(i - 1200 < 109)
            }
        };
        let m = SplitManifest {
            train,
            test,
            ..Default::default()
        };
        m.validate().unwrap();
        let (tr, te) = m.frame_totals(frames);
        assert_eq!((tr, te), (30691, 8509));
        assert_eq!(tr + te, 39200);
    }

    #[test]
    fn overlapping_manifest_is_leakage() {
        let m = SplitManifest {
            train: vec!["a".into(), "b".into()],
            test: vec!["b".into()],
            ..Default::default()
        };
        assert!(matches!(m.validate(), Err(Error::Leakage(_))));
    }
}
