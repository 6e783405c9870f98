//! Fixed-dimension semantic vectors and cosine similarity.
//!
//! The engine only depends on the [`EmbeddingProvider`] contract. The bundled
//! [`HashEmbedder`] hashes word uni- and bi-grams into signed buckets, which
//! keeps lexical overlap structure without any model weights. Vectors from an
//! external encoder can be supplied through an [`EmbeddingStore`] file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{GesaError, Result};

pub const DEFAULT_DIMENSION: usize = 768;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Rejects non-finite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GesaError::InvalidArgument("embedding has non-finite entries".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;

    /// Same text always maps to the same vector when set.
    fn is_deterministic(&self) -> bool;

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector>;

    /// A precomputed vector keyed by entity id, if the provider holds one.
    fn lookup(&self, _entity_id: &str) -> Option<EmbeddingVector> {
        None
    }

    fn embed_entity(&self, entity_id: &str, text: &str) -> Result<EmbeddingVector> {
        match self.lookup(entity_id) {
            Some(v) => Ok(v),
            None => self.embed_text(text),
        }
    }
}

/// Lowercases and collapses runs of whitespace.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Signed feature hashing of word uni/bi-grams followed by L2 normalization.
#[derive(Clone, Debug)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(GesaError::InvalidArgument("embedding dimension must be positive".into()));
        }
        Ok(Self { dim })
    }

    fn bucket(&self, gram: &str) -> (usize, f64) {
        let digest = Sha256::digest(gram.as_bytes());
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        let h = u64::from_le_bytes(word);
        let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
        ((h % self.dim as u64) as usize, sign)
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dim: DEFAULT_DIMENSION }
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        let normalized = normalize_text(text);
        if normalized.is_empty() {
            return Err(GesaError::Empty("text to embed is blank".into()));
        }
        let words: Vec<&str> = normalized.split(' ').collect();
        let mut values = vec![0.0; self.dim];
        for w in &words {
            let (i, s) = self.bucket(w);
            values[i] += s;
        }
        for pair in words.windows(2) {
            let (i, s) = self.bucket(&format!("{} {}", pair[0], pair[1]));
            values[i] += s;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            // Every gram cancelled against another in the same bucket.
            return Err(GesaError::ZeroVector);
        }
        values.iter_mut().for_each(|v| *v /= norm);
        EmbeddingVector::new(values)
    }
}

/// Cosine of the angle between two vectors, clamped to `[-1, 1]`.
pub fn cosine_similarity(v: &EmbeddingVector, u: &EmbeddingVector) -> Result<f64> {
    cosine(v.values(), u.values())
}

pub fn cosine(v: &[f64], u: &[f64]) -> Result<f64> {
    if v.len() != u.len() {
        return Err(GesaError::DimensionMismatch { expected: v.len(), actual: u.len() });
    }
    let (mut dot, mut nv, mut nu) = (0.0, 0.0, 0.0);
    for (a, b) in v.iter().zip(u) {
        dot += a * b;
        nv += a * a;
        nu += b * b;
    }
    if nv == 0.0 || nu == 0.0 {
        return Err(GesaError::ZeroVector);
    }
    Ok((dot / (nv.sqrt() * nu.sqrt())).clamp(-1.0, 1.0))
}

/// Precomputed vectors keyed by entity id.
///
/// File format: one record per line, `entity_id<TAB>v1,v2,...,vd`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingStore {
    vectors: BTreeMap<String, EmbeddingVector>,
}

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, v: EmbeddingVector) -> Result<()> {
        if let Some(d) = self.dimension() {
            if v.dim() != d {
                return Err(GesaError::DimensionMismatch { expected: d, actual: v.dim() });
            }
        }
        self.vectors.insert(id.into(), v);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingVector> {
        self.vectors.get(id)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dimension(&self) -> Option<usize> {
        self.vectors.values().next().map(EmbeddingVector::dim)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &EmbeddingVector)> {
        self.vectors.iter()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut store = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, values) = line.split_once('\t').ok_or_else(|| {
                GesaError::Format(format!("line {}: missing tab separator", lineno + 1))
            })?;
            let values = values
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| GesaError::Format(format!("line {}: {e}", lineno + 1)))?;
            let v = EmbeddingVector::new(values)
                .map_err(|e| GesaError::Format(format!("line {}: {e}", lineno + 1)))?;
            store.insert(id, v).map_err(|e| GesaError::Format(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(store)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            GesaError::Format(format!("cannot read {}: {e}", path.as_ref().display()))
        })?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, v) in &self.vectors {
            out.push_str(id);
            out.push('\t');
            for (i, x) in v.values().iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write!(out, "{x}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Looks up precomputed vectors first and falls back to embedding text.
pub struct StoreProvider<P> {
    store: EmbeddingStore,
    fallback: P,
}

impl<P: EmbeddingProvider> StoreProvider<P> {
    pub fn new(store: EmbeddingStore, fallback: P) -> Result<Self> {
        if let Some(d) = store.dimension() {
            if d != fallback.dimension() {
                return Err(GesaError::DimensionMismatch { expected: fallback.dimension(), actual: d });
            }
        }
        Ok(Self { store, fallback })
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for StoreProvider<P> {
    fn dimension(&self) -> usize {
        self.fallback.dimension()
    }

    fn is_deterministic(&self) -> bool {
        self.fallback.is_deterministic()
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        self.fallback.embed_text(text)
    }

    fn lookup(&self, entity_id: &str) -> Option<EmbeddingVector> {
        self.store.get(entity_id).cloned()
    }
}
