//! Embedding records for phrases and images, and the similarity measures used to rank them.
//!
//! Two on-disk formats are accepted by [`load_embeddings`]:
//!
//! * JSONL, one record per line with the fields `key, kind, model, dim, vector`.
//! * Binary, starting with the magic `VWSDEMB1`, followed by records of
//!   `u16 key_len | key | u8 kind | u16 model_len | model | u32 dim | dim × f32`,
//!   all integers and floats little-endian.
//!
//! Image records are keyed by image id. Text records are keyed by [`text_key`].

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::text::normalize_whitespace;

pub const BINARY_MAGIC: &[u8; 8] = b"VWSDEMB1";

#[derive(Debug, Error)]
pub enum VectorError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cosine similarity is undefined for a zero-norm vector")]
    ZeroNorm,
    #[error("record {record}: {message}")]
    Malformed { record: usize, message: String },
    #[error("model {model:?} has records of dim {expected} and {found}")]
    DimInconsistent {
        model: String,
        expected: usize,
        found: usize,
    },
    #[error("record {key:?} declares dim {dim} but has {len} components")]
    DimLength { key: String, dim: usize, len: usize },
    #[error("record {key:?} contains a non-finite component")]
    NonFinite { key: String },
    #[error("duplicate key {key:?} for model {model:?} with a different payload")]
    ConflictingDuplicate { key: String, model: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Text,
    Image,
}

impl EmbeddingKind {
    fn to_byte(self) -> u8 {
        match self {
            EmbeddingKind::Text => 0,
            EmbeddingKind::Image => 1,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(EmbeddingKind::Text),
            1 => Some(EmbeddingKind::Image),
            _ => None,
        }
    }
}

/// A named vector produced by a named encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRecord {
    pub key: String,
    pub kind: EmbeddingKind,
    pub model: String,
    pub dim: usize,
    pub vector: Vec<f32>,
}

impl EmbeddingRecord {
    pub fn validate(&self) -> Result<(), VectorError> {
        if self.dim == 0 || self.vector.len() != self.dim {
            return Err(VectorError::DimLength {
                key: self.key.clone(),
                dim: self.dim,
                len: self.vector.len(),
            });
        }
        if self.vector.iter().any(|v| !v.is_finite()) {
            return Err(VectorError::NonFinite {
                key: self.key.clone(),
            });
        }
        Ok(())
    }

    fn same_payload(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self
                .vector
                .iter()
                .zip(&other.vector)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Stable key for a text embedding: hex SHA-256 of the whitespace-normalized text.
pub fn text_key(text: &str) -> String {
    let digest = Sha256::digest(normalize_whitespace(text).as_bytes());
    hex::encode(digest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityMeasure {
    #[default]
    Cosine,
    Euclidean,
    Manhattan,
}

impl SimilarityMeasure {
    pub const ALL: [SimilarityMeasure; 3] = [
        SimilarityMeasure::Cosine,
        SimilarityMeasure::Euclidean,
        SimilarityMeasure::Manhattan,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SimilarityMeasure::Cosine => "cosine",
            SimilarityMeasure::Euclidean => "euclidean",
            SimilarityMeasure::Manhattan => "manhattan",
        }
    }
}

impl fmt::Display for SimilarityMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SimilarityMeasure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cosine" => Ok(SimilarityMeasure::Cosine),
            "euclidean" => Ok(SimilarityMeasure::Euclidean),
            "manhattan" => Ok(SimilarityMeasure::Manhattan),
            other => Err(format!(
                "unknown similarity measure {other:?} (expected cosine, euclidean or manhattan)"
            )),
        }
    }
}

/// Higher-is-better similarity between two vectors.
///
/// Cosine returns `dot(u, v) / (|u|₂ |v|₂)`; the two distances are negated so that
/// every measure ranks in the same direction. Accumulation is done in `f64`.
pub fn similarity(u: &[f32], v: &[f32], measure: SimilarityMeasure) -> Result<f64, VectorError> {
    if u.len() != v.len() {
        return Err(VectorError::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let pairs = u.iter().zip(v).map(|(&a, &b)| (f64::from(a), f64::from(b)));
    match measure {
        SimilarityMeasure::Cosine => {
            let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
            for (a, b) in pairs {
                dot += a * b;
                nu += a * a;
                nv += b * b;
            }
            if nu == 0.0 || nv == 0.0 {
                return Err(VectorError::ZeroNorm);
            }
            Ok(dot / (nu.sqrt() * nv.sqrt()))
        }
        SimilarityMeasure::Euclidean => {
            let sq: f64 = pairs.map(|(a, b)| (a - b) * (a - b)).sum();
            Ok(-sq.sqrt())
        }
        SimilarityMeasure::Manhattan => Ok(-pairs.map(|(a, b)| (a - b).abs()).sum::<f64>()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct StoreKey {
    model: String,
    kind: EmbeddingKind,
    key: String,
}

/// Write-once collection of embedding records keyed by `(model, kind, key)`.
#[derive(Debug, Default, Clone)]
pub struct EmbeddingStore {
    records: HashMap<StoreKey, EmbeddingRecord>,
    dims: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Inserts a record. An exact duplicate is a no-op; a conflicting one is an error.
    pub fn insert(&mut self, record: EmbeddingRecord) -> Result<(), VectorError> {
        record.validate()?;
        if let Some(&expected) = self.dims.get(&record.model) {
            if expected != record.dim {
                return Err(VectorError::DimInconsistent {
                    model: record.model.clone(),
                    expected,
                    found: record.dim,
                });
            }
        }
        let key = StoreKey {
            model: record.model.clone(),
            kind: record.kind,
            key: record.key.clone(),
        };
        if let Some(existing) = self.records.get(&key) {
            if existing.same_payload(&record) {
                return Ok(());
            }
            return Err(VectorError::ConflictingDuplicate {
                key: record.key,
                model: record.model,
            });
        }
        self.dims.insert(record.model.clone(), record.dim);
        self.records.insert(key, record);
        Ok(())
    }

    pub fn get(&self, model: &str, kind: EmbeddingKind, key: &str) -> Option<&EmbeddingRecord> {
        self.records.get(&StoreKey {
            model: model.to_string(),
            kind,
            key: key.to_string(),
        })
    }

    pub fn image(&self, model: &str, image_id: &str) -> Option<&EmbeddingRecord> {
        self.get(model, EmbeddingKind::Image, image_id)
    }

    /// Looks up a text embedding by its raw text (hashed with [`text_key`]).
    pub fn text(&self, model: &str, text: &str) -> Option<&EmbeddingRecord> {
        self.get(model, EmbeddingKind::Text, &text_key(text))
    }

    pub fn dim(&self, model: &str) -> Option<usize> {
        self.dims.get(model).copied()
    }

    pub fn merge(&mut self, other: EmbeddingStore) -> Result<(), VectorError> {
        let mut records: Vec<_> = other.records.into_values().collect();
        records.sort_by(|a, b| (&a.model, a.kind, &a.key).cmp(&(&b.model, b.kind, &b.key)));
        records.into_iter().try_for_each(|r| self.insert(r))
    }

    /// Records sorted by `(model, kind, key)`, for deterministic export.
    pub fn sorted_records(&self) -> Vec<&EmbeddingRecord> {
        let mut out: Vec<_> = self.records.values().collect();
        out.sort_by(|a, b| (&a.model, a.kind, &a.key).cmp(&(&b.model, b.kind, &b.key)));
        out
    }

    pub fn from_records<I>(records: I) -> Result<Self, VectorError>
    where
        I: IntoIterator<Item = EmbeddingRecord>,
    {
        let mut store = Self::new();
        for r in records {
            store.insert(r)?;
        }
        Ok(store)
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, VectorError> {
        let mut store = Self::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: EmbeddingRecord =
                serde_json::from_str(line).map_err(|e| VectorError::Malformed {
                    record: idx + 1,
                    message: e.to_string(),
                })?;
            store.insert(record)?;
        }
        Ok(store)
    }

    pub fn parse_binary(bytes: &[u8]) -> Result<Self, VectorError> {
        let mut reader = ByteReader { bytes, pos: 0 };
        let magic = reader.take(BINARY_MAGIC.len(), 0)?;
        if magic != BINARY_MAGIC {
            return Err(VectorError::Malformed {
                record: 0,
                message: "missing VWSDEMB1 magic".into(),
            });
        }
        let mut store = Self::new();
        let mut record = 0usize;
        while !reader.is_empty() {
            record += 1;
            let key_len = u16::from_le_bytes(reader.array(record)?) as usize;
            let key = reader.utf8(key_len, record)?;
            let kind_byte = reader.take(1, record)?[0];
            let kind =
                EmbeddingKind::from_byte(kind_byte).ok_or_else(|| VectorError::Malformed {
                    record,
                    message: format!("unknown kind byte {kind_byte}"),
                })?;
            let model_len = u16::from_le_bytes(reader.array(record)?) as usize;
            let model = reader.utf8(model_len, record)?;
            let dim = u32::from_le_bytes(reader.array(record)?) as usize;
            let mut vector = Vec::with_capacity(dim);
            for _ in 0..dim {
                vector.push(f32::from_le_bytes(reader.array(record)?));
            }
            store.insert(EmbeddingRecord {
                key,
                kind,
                model,
                dim,
                vector,
            })?;
        }
        Ok(store)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in self.sorted_records() {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }
}

/// Encodes records in the binary layout, in the given order.
pub fn encode_binary<'a, I>(records: I) -> Vec<u8>
where
    I: IntoIterator<Item = &'a EmbeddingRecord>,
{
    let mut out = BINARY_MAGIC.to_vec();
    for r in records {
        out.extend_from_slice(&(r.key.len() as u16).to_le_bytes());
        out.extend_from_slice(r.key.as_bytes());
        out.push(r.kind.to_byte());
        out.extend_from_slice(&(r.model.len() as u16).to_le_bytes());
        out.extend_from_slice(r.model.as_bytes());
        out.extend_from_slice(&(r.vector.len() as u32).to_le_bytes());
        for v in &r.vector {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn is_empty(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    fn take(&mut self, n: usize, record: usize) -> Result<&'a [u8], VectorError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(VectorError::Malformed {
                record,
                message: "truncated binary record".into(),
            }),
        }
    }

    fn array<const N: usize>(&mut self, record: usize) -> Result<[u8; N], VectorError> {
        let slice = self.take(N, record)?;
        Ok(slice.try_into().expect("length checked"))
    }

    fn utf8(&mut self, n: usize, record: usize) -> Result<String, VectorError> {
        let raw = self.take(n, record)?;
        String::from_utf8(raw.to_vec()).map_err(|_| VectorError::Malformed {
            record,
            message: "string field is not valid UTF-8".into(),
        })
    }
}

/// Loads an embedding file, detecting the binary layout by its magic prefix.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingStore, VectorError> {
    let bytes = fs::read(path).map_err(|source| VectorError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.starts_with(BINARY_MAGIC) {
        return EmbeddingStore::parse_binary(&bytes);
    }
    let text = String::from_utf8(bytes).map_err(|_| VectorError::Malformed {
        record: 0,
        message: format!("{} is neither VWSDEMB1 binary nor UTF-8 JSONL", path.display()),
    })?;
    EmbeddingStore::parse_jsonl(&text)
}
