//! Text embeddings for backbone profiles, role prompts and queries.
//!
//! Vectors come either from a precomputed embeddings file (JSON lines: a
//! `{schema_version, dim}` header followed by `{key_hex, values}` records,
//! keyed by the SHA-256 of the UTF-8 text) or from a deterministic fallback
//! encoder that hashes character trigrams of whitespace tokens into `dim`
//! buckets and L2-normalises the counts.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::BackboneProfile;
use crate::error::EmbeddingError;

pub const EMBEDDINGS_SCHEMA_VERSION: u32 = 1;
/// Fallback dimension.
pub const DEFAULT_FALLBACK_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            dot / denom
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Precomputed,
    Fallback,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    key_hex: String,
    values: Vec<f64>,
}

/// Problems tolerated while loading an embeddings file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LoadWarning {
    DuplicateKey { line: usize, key: String },
    MalformedKey { line: usize, key: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    records: IndexMap<String, Vec<f64>>,
    provenance: Provenance,
}

/// SHA-256 of the UTF-8 text, lowercase hex.
pub fn text_key(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Character trigrams of `<token>` for each whitespace token.
fn trigrams(text: &str) -> Vec<String> {
    let mut grams = Vec::new();
    for token in text.split_whitespace() {
        let padded: Vec<char> = std::iter::once('<')
            .chain(token.chars())
            .chain(std::iter::once('>'))
            .collect();
        for w in padded.windows(3) {
            grams.push(w.iter().collect());
        }
    }
    if grams.is_empty() && !text.is_empty() {
        grams.push(text.to_string());
    }
    grams
}

/// Deterministic hashing encoder; zero vector only for the empty string.
pub fn fallback_encode(text: &str, dim: usize) -> Embedding {
    let mut values = vec![0.0; dim];
    if dim == 0 {
        return Embedding::new(values);
    }
    for gram in trigrams(text) {
        let bucket = (fnv1a(gram.as_bytes()) % dim as u64) as usize;
        values[bucket] += 1.0;
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        values.iter_mut().for_each(|v| *v /= norm);
    }
    Embedding::new(values)
}

impl EmbeddingStore {
    /// Empty store: every lookup goes to the fallback encoder.
    pub fn fallback(dim: usize) -> Self {
        Self {
            dim,
            records: IndexMap::new(),
            provenance: Provenance::Fallback,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains_text(&self, text: &str) -> bool {
        self.records.contains_key(&text_key(text))
    }

    /// Adds or replaces the vector for `text`.
    pub fn insert_text(&mut self, text: &str, values: Vec<f64>) -> Result<(), EmbeddingError> {
        let key = text_key(text);
        self.insert_key(key, values)
    }

    fn insert_key(&mut self, key: String, values: Vec<f64>) -> Result<(), EmbeddingError> {
        if values.len() != self.dim {
            return Err(EmbeddingError::DimMismatch {
                expected: self.dim,
                found: values.len(),
                key,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(key));
        }
        self.records.insert(key, values);
        Ok(())
    }

    /// Stored vector for `text`, or the fallback encoding.
    pub fn encode_text(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        let key = text_key(text);
        match self.records.get(&key) {
            Some(values) if values.len() != self.dim => Err(EmbeddingError::DimMismatch {
                expected: self.dim,
                found: values.len(),
                key,
            }),
            Some(values) => Ok(Embedding::new(values.clone())),
            None => Ok(fallback_encode(text, self.dim)),
        }
    }

    /// Embeddings of the performance, price and type profiles.
    pub fn profile_embeddings(
        &self,
        profile: &BackboneProfile,
    ) -> Result<(Embedding, Embedding, Embedding), EmbeddingError> {
        for (field, text) in [
            ("perf_profile", &profile.perf_profile),
            ("ptp_profile", &profile.ptp_profile),
            ("type_profile", &profile.type_profile),
        ] {
            if text.trim().is_empty() {
                return Err(EmbeddingError::Parse {
                    line: 0,
                    message: format!("backbone `{}` has an empty {field}", profile.id),
                });
            }
        }
        Ok((
            self.encode_text(&profile.perf_profile)?,
            self.encode_text(&profile.ptp_profile)?,
            self.encode_text(&profile.type_profile)?,
        ))
    }

    pub fn read<R: Read>(input: R) -> Result<(Self, Vec<LoadWarning>), EmbeddingError> {
        let mut lines = BufReader::new(input).lines().enumerate();
        let (_, header) = lines.next().ok_or(EmbeddingError::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let header: Header = serde_json::from_str(&header?).map_err(|e| EmbeddingError::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        if header.schema_version != EMBEDDINGS_SCHEMA_VERSION {
            return Err(EmbeddingError::Parse {
                line: 1,
                message: format!("unsupported schema_version {}", header.schema_version),
            });
        }
        let mut store = Self {
            dim: header.dim,
            records: IndexMap::new(),
            provenance: Provenance::Precomputed,
        };
        let mut warnings = Vec::new();
        for (idx, line) in lines {
            let line = line?;
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(&line).map_err(|e| EmbeddingError::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
            let well_formed = record.key_hex.len() == 64
                && record.key_hex.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b));
            if !well_formed {
                warnings.push(LoadWarning::MalformedKey {
                    line: lineno,
                    key: record.key_hex.clone(),
                });
            }
            if store.records.contains_key(&record.key_hex) {
                warnings.push(LoadWarning::DuplicateKey {
                    line: lineno,
                    key: record.key_hex.clone(),
                });
            }
            store.insert_key(record.key_hex, record.values)?;
        }
        Ok((store, warnings))
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<(), EmbeddingError> {
        let mut buf = String::new();
        let header = Header {
            schema_version: EMBEDDINGS_SCHEMA_VERSION,
            dim: self.dim,
        };
        let _ = writeln!(buf, "{}", serde_json::to_string(&header).expect("serializable"));
        for (key, values) in &self.records {
            let record = Record {
                key_hex: key.clone(),
                values: values.clone(),
            };
            let _ = writeln!(buf, "{}", serde_json::to_string(&record).expect("finite values"));
        }
        out.write_all(buf.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<LoadWarning>), EmbeddingError> {
        Self::read(std::fs::File::open(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbeddingError> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }
}
