//! Named parameter storage with a flat little-endian serialization at the
//! scalar's native width.
//!
//! Parameters are serialized in declaration order; the manifest records the
//! name, shape and byte offset of each entry.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    /// Running statistics are stored and counted but never optimized.
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub trainable: bool,
}

impl ManifestEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, value: Vec<T>, trainable: bool) -> ParamId {
        let n: usize = shape.iter().product();
        assert_eq!(n, value.len(), "parameter value does not match its shape");
        self.params.push(Param {
            name: name.into(),
            shape,
            value,
            grad: vec![T::zero(); n],
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[T] {
        &self.params[id.0].value
    }

    /// Kernel parameter viewed as a 4D tensor.
    pub fn tensor(&self, id: ParamId) -> Tensor<T> {
        let p = &self.params[id.0];
        let mut shape = [1usize; 4];
        for (s, &d) in shape.iter_mut().zip(&p.shape) {
            *s = d;
        }
        Tensor::new(shape, p.value.clone()).expect("parameter tensor shape")
    }

    pub fn accumulate_grad(&mut self, id: ParamId, grad: &[T]) {
        let p = &mut self.params[id.0];
        debug_assert_eq!(p.grad.len(), grad.len());
        p.grad.iter_mut().zip(grad).for_each(|(g, &d)| *g += d);
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count, trainable or not.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn manifest(&self) -> Vec<ManifestEntry> {
        let mut offset = 0;
        self.params
            .iter()
            .map(|p| {
                let e = ManifestEntry {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    offset,
                    trainable: p.trainable,
                };
                offset += p.value.len() * T::WIDTH;
                e
            })
            .collect()
    }

    pub fn to_blob(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.scalar_count() * T::WIDTH);
        for p in &self.params {
            for &v in &p.value {
                v.write_le(&mut out);
            }
        }
        out
    }

    /// Overwrites values from a blob laid out per `manifest`; names and shapes
    /// must match this store exactly.
    pub fn load_blob(&mut self, manifest: &[ManifestEntry], blob: &[u8]) -> Result<()> {
        if manifest.len() != self.params.len() {
            return Err(Error::Format(format!(
                "manifest lists {} parameters, model has {}",
                manifest.len(),
                self.params.len()
            )));
        }
        for (entry, p) in manifest.iter().zip(&self.params) {
            if entry.name != p.name || entry.shape != p.shape {
                return Err(Error::Format(format!(
                    "manifest entry {} {:?} does not match parameter {} {:?}",
                    entry.name, entry.shape, p.name, p.shape
                )));
            }
            let end = entry.offset + entry.len() * T::WIDTH;
            if end > blob.len() {
                return Err(Error::Format(format!(
                    "parameter blob truncated: {} needs bytes up to {end}, blob has {}",
                    entry.name,
                    blob.len()
                )));
            }
        }
        for (entry, p) in manifest.iter().zip(&mut self.params) {
            let bytes = &blob[entry.offset..entry.offset + entry.len() * T::WIDTH];
            for (v, chunk) in p.value.iter_mut().zip(bytes.chunks_exact(T::WIDTH)) {
                *v = T::read_le(chunk);
            }
        }
        Ok(())
    }

    /// SHA-256 over the serialized values; used to audit which parameters a step touched.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_blob());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn ensure_finite_grads(&self) -> Result<()> {
        for p in &self.params {
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient { op: p.name.clone() });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_offsets_follow_declaration_order() {
        let mut s = ParamStore::<f32>::new();
        s.add("a", vec![2, 3], vec![0.0; 6], true);
        s.add("b", vec![4], vec![1.0; 4], false);
        let m = s.manifest();
        assert_eq!(m[0].offset, 0);
        assert_eq!(m[1].offset, 24);
        assert_eq!(s.to_blob().len(), 40);
        assert_eq!(s.scalar_count(), m.iter().map(ManifestEntry::len).sum::<usize>());
    }

    #[test]
    fn blob_round_trip_and_truncation() {
        let mut s = ParamStore::<f32>::new();
        s.add("w", vec![3], vec![0.5, -1.25, 3.0], true);
        let blob = s.to_blob();
        let mut t = ParamStore::<f32>::new();
        t.add("w", vec![3], vec![0.0; 3], true);
        t.load_blob(&s.manifest(), &blob).unwrap();
        assert_eq!(t.value(ParamId(0)), s.value(ParamId(0)));
        assert!(matches!(t.load_blob(&s.manifest(), &blob[..8]), Err(Error::Format(_))));
    }
}
