use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Regime, TrainingConfig};
use crate::error::{Error, Result};
use crate::models::{DiscriminatorConfig, GeneratorConfig};
use crate::nn::{AdamState, ManifestEntry, ParamStore};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MIMICKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A byte range of the blob holding one parameter store or one optimizer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub offset: usize,
    pub length: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<Vec<ManifestEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam_step: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub dtype: String,
    pub regime: Regime,
    /// Optimizer steps completed.
    pub step: usize,
    pub training: TrainingConfig,
    pub generator: Option<GeneratorConfig>,
    pub discriminator: Option<DiscriminatorConfig>,
    pub sections: Vec<Section>,
    pub blob_sha256: String,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

/// Self-describing archive: magic, `u32` header length, JSON header, blob.
#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub header: CheckpointHeader,
    blob: Vec<u8>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Archive {
    pub fn new<T: Scalar>(
        regime: Regime,
        step: usize,
        training: TrainingConfig,
        generator: Option<GeneratorConfig>,
        discriminator: Option<DiscriminatorConfig>,
    ) -> Self {
        Archive {
            header: CheckpointHeader {
                format_version: CHECKPOINT_VERSION,
                dtype: T::NAME.to_string(),
                regime,
                step,
                training,
                generator,
                discriminator,
                sections: Vec::new(),
                blob_sha256: sha256_hex(&[]),
            },
            blob: Vec::new(),
        }
    }

    fn push(&mut self, section: Section, bytes: &[u8]) {
        self.blob.extend_from_slice(bytes);
        self.header.sections.push(section);
        self.header.blob_sha256 = sha256_hex(&self.blob);
    }

    pub fn push_params<T: Scalar>(&mut self, name: &str, store: &ParamStore<T>) {
        let bytes = store.to_blob();
        let section = Section {
            name: name.to_string(),
            offset: self.blob.len(),
            length: bytes.len(),
            manifest: Some(store.manifest()),
            adam_step: None,
        };
        self.push(section, &bytes);
    }

    /// First moments of every parameter, then second moments.
    pub fn push_adam<T: Scalar>(&mut self, name: &str, state: &AdamState<T>) {
        let mut bytes = Vec::new();
        for buf in state.m.iter().chain(&state.v) {
            for &x in buf {
                x.write_le(&mut bytes);
            }
        }
        let section = Section {
            name: name.to_string(),
            offset: self.blob.len(),
            length: bytes.len(),
            manifest: None,
            adam_step: Some(state.step),
        };
        self.push(section, &bytes);
    }

    fn section(&self, name: &str) -> Result<(&Section, &[u8])> {
        let s = self
            .header
            .sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Format(format!("checkpoint has no section {name:?}")))?;
        Ok((s, &self.blob[s.offset..s.offset + s.length]))
    }

    fn check_dtype<T: Scalar>(&self) -> Result<()> {
        if self.header.dtype != T::NAME {
            return Err(Error::Format(format!(
                "checkpoint stores {} values, caller expects {}",
                self.header.dtype,
                T::NAME
            )));
        }
        Ok(())
    }

    pub fn restore_params<T: Scalar>(&self, name: &str, store: &mut ParamStore<T>) -> Result<()> {
        self.check_dtype::<T>()?;
        let (s, bytes) = self.section(name)?;
        let manifest = s
            .manifest
            .as_ref()
            .ok_or_else(|| Error::Format(format!("section {name:?} has no manifest")))?;
        if bytes.len() != store.scalar_count() * T::WIDTH {
            return Err(Error::Format(format!(
                "section {name:?} holds {} bytes, model needs {}",
                bytes.len(),
                store.scalar_count() * T::WIDTH
            )));
        }
        store.load_blob(manifest, bytes)
    }

    pub fn restore_adam<T: Scalar>(&self, name: &str, state: &mut AdamState<T>) -> Result<()> {
        self.check_dtype::<T>()?;
        let (s, bytes) = self.section(name)?;
        let count: usize = state.m.iter().map(Vec::len).sum();
        if bytes.len() != 2 * count * T::WIDTH {
            return Err(Error::Format(format!(
                "optimizer section {name:?} holds {} bytes, state needs {}",
                bytes.len(),
                2 * count * T::WIDTH
            )));
        }
        let mut chunks = bytes.chunks_exact(T::WIDTH);
        for buf in state.m.iter_mut().chain(state.v.iter_mut()) {
            for x in buf.iter_mut() {
                *x = T::read_le(chunks.next().expect("length checked"));
            }
        }
        state.step = s
            .adam_step
            .ok_or_else(|| Error::Format(format!("optimizer section {name:?} has no step")))?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let len = u32::try_from(header.len()).map_err(|_| Error::Format("checkpoint header too large".into()))?;
        let mut out = Vec::with_capacity(12 + header.len() + self.blob.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&self.blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint archive (bad magic)".into()));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let header_bytes = bytes
            .get(12..12 + len)
            .ok_or_else(|| Error::Format(format!("checkpoint truncated inside its {len}-byte header")))?;
        let probe: VersionProbe = serde_json::from_slice(header_bytes)
            .map_err(|e| Error::Format(format!("checkpoint header is not valid JSON: {e}")))?;
        if probe.format_version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: probe.format_version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let header: CheckpointHeader = serde_json::from_slice(header_bytes)
            .map_err(|e| Error::Format(format!("malformed checkpoint header: {e}")))?;
        let blob = bytes[12 + len..].to_vec();
        let expected: usize = header.sections.iter().map(|s| s.length).sum();
        if blob.len() != expected {
            return Err(Error::Format(format!(
                "checkpoint blob has {} bytes, sections need {expected}{}",
                blob.len(),
                if blob.len() < expected { " (truncated)" } else { "" }
            )));
        }
        let mut cursor = 0;
        for s in &header.sections {
            if s.offset != cursor {
                return Err(Error::Format(format!("section {:?} is not contiguous", s.name)));
            }
            cursor += s.length;
        }
        if sha256_hex(&blob) != header.blob_sha256 {
            return Err(Error::Format("checkpoint blob checksum mismatch (corrupted)".into()));
        }
        Ok(Archive { header, blob })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        crate::data::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
