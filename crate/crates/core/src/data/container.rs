use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Cineloop, Frame, Target, ValueDomain};
use crate::error::{Error, Result};
use crate::image::Image;

pub const CONTAINER_VERSION: u32 = 1;
const HEADER_SUFFIX: &str = ".header.json";
const BLOB_SUFFIX: &str = ".frames.f32";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CineloopHeader {
    pub format_version: u32,
    pub id: String,
    /// `[height, width]`.
    pub extent: [usize; 2],
    pub frame_count: usize,
    pub value_domain: ValueDomain,
    pub scanner: String,
    pub target: Target,
    pub seed: Option<u64>,
}

/// Where the post-processed counterpart of each raw loop comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruth {
    /// Recomputed with the reference post-processor.
    Oracle,
    /// Stored as a separate loop named in [`CorpusEntry::processed`].
    Paired,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub raw: String,
    #[serde(default)]
    pub processed: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format_version: u32,
    pub ground_truth: GroundTruth,
    pub entries: Vec<CorpusEntry>,
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "cineloop id {id:?} must be non-empty ASCII [A-Za-z0-9._-] not starting with '.'"
        )))
    }
}

fn header_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}{HEADER_SUFFIX}"))
}

fn blob_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}{BLOB_SUFFIX}"))
}

/// Stores one cineloop as a JSON header plus a little-endian f32 blob of all
/// frames in row-major order. The blob lands first so a visible header
/// always has a complete blob.
pub fn write_cineloop(dir: &Path, cineloop: &Cineloop) -> Result<()> {
    check_id(&cineloop.id)?;
    cineloop.validate()?;
    let (h, w) = cineloop.extent();
    let mut blob = Vec::with_capacity(h * w * cineloop.frames.len() * 4);
    for f in &cineloop.frames {
        for v in f.image.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = CineloopHeader {
        format_version: CONTAINER_VERSION,
        id: cineloop.id.clone(),
        extent: [h, w],
        frame_count: cineloop.frames.len(),
        value_domain: cineloop.frames[0].domain,
        scanner: cineloop.scanner.clone(),
        target: cineloop.target,
        seed: cineloop.seed,
    };
    fs::create_dir_all(dir)?;
    write_atomic(&blob_path(dir, &cineloop.id), &blob)?;
    write_atomic(&header_path(dir, &cineloop.id), &serde_json::to_vec_pretty(&header)?)?;
    Ok(())
}

/// Every problem found with one loop, as human-readable strings.
fn load_checked(dir: &Path, id: &str) -> std::result::Result<Cineloop, Vec<String>> {
    let hp = header_path(dir, id);
    let text = fs::read(&hp).map_err(|e| vec![format!("{}: {e}", hp.display())])?;
    let header: CineloopHeader =
        serde_json::from_slice(&text).map_err(|e| vec![format!("{}: bad header: {e}", hp.display())])?;
    let mut problems = Vec::new();
    if header.format_version != CONTAINER_VERSION {
        problems.push(format!(
            "{}: format_version {} (expected {CONTAINER_VERSION})",
            hp.display(),
            header.format_version
        ));
    }
    if header.id != id {
        problems.push(format!("{}: header id {:?} does not match file name", hp.display(), header.id));
    }
    let [h, w] = header.extent;
    if h == 0 || w == 0 || header.frame_count == 0 {
        problems.push(format!(
            "{}: extent {h}x{w} with {} frames is empty",
            hp.display(),
            header.frame_count
        ));
    }
    if let Err(e) = header.value_domain.validate() {
        problems.push(format!("{}: {e}", hp.display()));
    }
    let bp = blob_path(dir, id);
    let bytes = match fs::read(&bp) {
        Ok(b) => b,
        Err(e) => {
            problems.push(format!("{}: {e}", bp.display()));
            return Err(problems);
        }
    };
    let expected = h * w * header.frame_count * 4;
    if bytes.len() != expected {
        problems.push(format!(
            "{}: {} bytes, header implies {expected} ({} frames of {h}x{w} f32)",
            bp.display(),
            bytes.len(),
            header.frame_count
        ));
    }
    if !problems.is_empty() {
        return Err(problems);
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let (lo, hi) = header.value_domain.bounds();
    let mut frames = Vec::with_capacity(header.frame_count);
    for (i, chunk) in values.chunks_exact(h * w).enumerate() {
        let frame = Frame::new(
            Image::new(h, w, chunk.to_vec()).expect("chunk length matches extent"),
            header.value_domain,
        );
        if let Some(p) = frame.first_out_of_domain() {
            problems.push(format!(
                "{}: frame {i} pixel {p} value {} outside [{lo}, {hi}]",
                bp.display(),
                frame.image.data()[p]
            ));
        }
        frames.push(frame);
    }
    if !problems.is_empty() {
        return Err(problems);
    }
    Ok(Cineloop {
        id: header.id,
        frames,
        scanner: header.scanner,
        target: header.target,
        seed: header.seed,
    })
}

pub fn read_cineloop(dir: &Path, id: &str) -> Result<Cineloop> {
    check_id(id)?;
    load_checked(dir, id).map_err(Error::Corpus)
}

/// Loads and validates every cineloop in `dir`, sorted by id. All problems
/// across all files are reported together.
pub fn ingest_external(dir: &Path) -> Result<Vec<Cineloop>> {
    let mut headers = Vec::new();
    let mut blobs = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') {
            continue;
        }
        if let Some(id) = name.strip_suffix(HEADER_SUFFIX) {
            headers.push(id.to_string());
        } else if let Some(id) = name.strip_suffix(BLOB_SUFFIX) {
            blobs.push(id.to_string());
        }
    }
    headers.sort();
    let mut problems = Vec::new();
    for id in &blobs {
        if !headers.contains(id) {
            problems.push(format!("{}: blob without header", blob_path(dir, id).display()));
        }
    }
    let mut loops = Vec::with_capacity(headers.len());
    for id in &headers {
        match load_checked(dir, id) {
            Ok(l) => loops.push(l),
            Err(p) => problems.extend(p),
        }
    }
    if problems.is_empty() {
        Ok(loops)
    } else {
        Err(Error::Corpus(problems))
    }
}

pub fn write_corpus(dir: &Path, manifest: &CorpusManifest) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(manifest)?)
}

pub fn read_corpus(dir: &Path) -> Result<CorpusManifest> {
    let m: CorpusManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    if m.format_version != CONTAINER_VERSION {
        return Err(Error::VersionMismatch {
            found: m.format_version,
            expected: CONTAINER_VERSION,
        });
    }
    Ok(m)
}
