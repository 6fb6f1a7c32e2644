//! Enrolled reference embeddings and identity decisions.
//!
//! A probe is scored against every entry by cosine similarity, entries are
//! pooled per identity (max by default) and identities are ranked by pooled
//! score. With a threshold, a top score below it yields an `Unknown` decision.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::{RwLock, RwLockReadGuard, RwLockWriteGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"RPGL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum GalleryError {
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),
    #[error("gallery is empty")]
    Empty,
    #[error("not a gallery file (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported gallery format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("inconsistent embedding dimension: {0}")]
    DimInconsistency(String),
    #[error("truncated gallery file: {0}")]
    Truncated(String),
    #[error("corrupt gallery file: {0}")]
    Corrupt(String),
    #[error("gallery i/o: {0}")]
    Io(String),
}

/// Finite, nonzero feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self, GalleryError> {
        if values.is_empty() {
            return Err(GalleryError::InvalidEmbedding("empty vector".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GalleryError::InvalidEmbedding(format!(
                "non-finite value at index {i}"
            )));
        }
        let norm = l2(&values);
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(GalleryError::InvalidEmbedding("zero norm".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        l2(&self.0)
    }

    pub fn scaled(&self, factor: f32) -> Result<Self, GalleryError> {
        Self::new(self.0.iter().map(|v| v * factor).collect())
    }
}

impl TryFrom<Vec<f32>> for Embedding {
    type Error = GalleryError;

    fn try_from(v: Vec<f32>) -> Result<Self, Self::Error> {
        Embedding::new(v)
    }
}

impl From<Embedding> for Vec<f32> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

fn l2(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

/// `<u, v> / (|u| |v|)` clamped to `[-1, 1]`.
pub fn cosine_similarity(u: &Embedding, v: &Embedding) -> Result<f64, GalleryError> {
    if u.dim() != v.dim() {
        return Err(GalleryError::DimMismatch {
            expected: u.dim(),
            actual: v.dim(),
        });
    }
    Ok(cosine_unchecked(u, v.values(), v.norm()))
}

#[inline]
fn cosine_unchecked(u: &Embedding, v: &[f32], v_norm: f64) -> f64 {
    let dot: f64 = u
        .values()
        .iter()
        .zip(v)
        .map(|(&a, &b)| a as f64 * b as f64)
        .sum();
    (dot / (u.norm() * v_norm)).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryEntry {
    pub identity: String,
    pub embedding: Embedding,
    pub source_ref: String,
    pub enroll_seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Max,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedIdentity {
    pub identity: String,
    pub score: f64,
    /// Enrollment sequence of this identity's best-scoring entry.
    pub best_enroll_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "identity", rename_all = "snake_case")]
pub enum Decision {
    Identified(String),
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub ranking: Vec<RankedIdentity>,
    pub decision: Decision,
    pub threshold_used: Option<f64>,
}

impl MatchResult {
    pub fn top(&self) -> &RankedIdentity {
        &self.ranking[0]
    }

    /// 1-based rank of `identity`, if present.
    pub fn rank_of(&self, identity: &str) -> Option<usize> {
        self.ranking
            .iter()
            .position(|r| r.identity == identity)
            .map(|p| p + 1)
    }

    pub fn identities(&self) -> Vec<String> {
        self.ranking.iter().map(|r| r.identity.clone()).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gallery {
    dim: Option<usize>,
    entries: Vec<GalleryEntry>,
    next_seq: u64,
}

impl Gallery {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fixed by the first enrollment.
    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn entries(&self) -> &[GalleryEntry] {
        &self.entries
    }

    pub fn identity_count(&self) -> usize {
        let mut ids: Vec<&str> = self.entries.iter().map(|e| e.identity.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    pub fn enroll(
        &mut self,
        identity: impl Into<String>,
        embedding: Embedding,
        source_ref: impl Into<String>,
    ) -> Result<u64, GalleryError> {
        if let Some(dim) = self.dim {
            if embedding.dim() != dim {
                return Err(GalleryError::DimMismatch {
                    expected: dim,
                    actual: embedding.dim(),
                });
            }
        }
        let identity = identity.into();
        if identity.is_empty() {
            return Err(GalleryError::InvalidEmbedding("empty identity label".into()));
        }
        self.dim = Some(embedding.dim());
        let seq = self.next_seq;
        self.next_seq += 1;
        self.entries.push(GalleryEntry {
            identity,
            embedding,
            source_ref: source_ref.into(),
            enroll_seq: seq,
        });
        Ok(seq)
    }

    pub fn identify(
        &self,
        probe: &Embedding,
        threshold: Option<f64>,
    ) -> Result<MatchResult, GalleryError> {
        self.identify_pooled(probe, threshold, Pooling::Max)
    }

    pub fn identify_pooled(
        &self,
        probe: &Embedding,
        threshold: Option<f64>,
        pooling: Pooling,
    ) -> Result<MatchResult, GalleryError> {
        let dim = self.dim.ok_or(GalleryError::Empty)?;
        if self.entries.is_empty() {
            return Err(GalleryError::Empty);
        }
        if probe.dim() != dim {
            return Err(GalleryError::DimMismatch {
                expected: dim,
                actual: probe.dim(),
            });
        }

        struct Acc {
            best: f64,
            best_seq: u64,
            sum: f64,
            n: usize,
        }
        let mut order: Vec<&str> = Vec::new();
        let mut acc: HashMap<&str, Acc> = HashMap::new();
        for e in &self.entries {
            let s = cosine_unchecked(probe, e.embedding.values(), e.embedding.norm());
            let slot = acc.entry(e.identity.as_str()).or_insert_with(|| {
                order.push(e.identity.as_str());
                Acc {
                    best: f64::NEG_INFINITY,
                    best_seq: e.enroll_seq,
                    sum: 0.0,
                    n: 0,
                }
            });
            if s > slot.best || (s == slot.best && e.enroll_seq < slot.best_seq) {
                slot.best = s;
                slot.best_seq = e.enroll_seq;
            }
            slot.sum += s;
            slot.n += 1;
        }

        let mut ranking: Vec<RankedIdentity> = order
            .into_iter()
            .map(|id| {
                let a = &acc[id];
                let score = match pooling {
                    Pooling::Max => a.best,
                    Pooling::Mean => a.sum / a.n as f64,
                };
                RankedIdentity {
                    identity: id.to_string(),
                    score,
                    best_enroll_seq: a.best_seq,
                }
            })
            .collect();
        ranking.sort_by(|x, y| {
            y.score
                .total_cmp(&x.score)
                .then(x.best_enroll_seq.cmp(&y.best_enroll_seq))
        });

        let top = ranking[0].score;
        let decision = match threshold {
            Some(t) if top < t => Decision::Unknown,
            _ => Decision::Identified(ranking[0].identity.clone()),
        };
        Ok(MatchResult {
            ranking,
            decision,
            threshold_used: threshold,
        })
    }

    /// Binary format: magic, u32 version, u32 dim, u64 count, then entries of
    /// length-prefixed (u32) identity and source strings, u64 enroll_seq and
    /// `dim` little-endian f32 values.
    pub fn save<W: Write>(&self, mut sink: W) -> Result<(), GalleryError> {
        let dim = self.dim.unwrap_or(0);
        if let Some(bad) = self.entries.iter().find(|e| e.embedding.dim() != dim) {
            return Err(GalleryError::DimInconsistency(format!(
                "entry {} has dim {} in a gallery of dim {dim}",
                bad.enroll_seq,
                bad.embedding.dim()
            )));
        }
        let mut buf = Vec::with_capacity(20 + self.entries.len() * (24 + 4 * dim));
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            for s in [&e.identity, &e.source_ref] {
                buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
                buf.extend_from_slice(s.as_bytes());
            }
            buf.extend_from_slice(&e.enroll_seq.to_le_bytes());
            for v in e.embedding.values() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        sink.write_all(&buf)
            .map_err(|e| GalleryError::Io(e.to_string()))
    }

    pub fn load<R: Read>(mut source: R) -> Result<Self, GalleryError> {
        let mut bytes = Vec::new();
        source
            .read_to_end(&mut bytes)
            .map_err(|e| GalleryError::Io(e.to_string()))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GalleryError> {
        let mut r = ByteReader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(GalleryError::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(GalleryError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let dim = r.u32("dim")? as usize;
        let count = r.u64("count")?;
        if count > 0 && dim == 0 {
            return Err(GalleryError::DimInconsistency(format!(
                "{count} entries declared with dimension 0"
            )));
        }
        let header_end = r.pos;
        match parse_entries(bytes, header_end, dim, count) {
            Ok((entries, next_seq)) => Ok(Self {
                dim: if count > 0 || dim > 0 { Some(dim) } else { None },
                entries,
                next_seq,
            }),
            Err(e @ (GalleryError::Truncated(_) | GalleryError::Corrupt(_))) if count > 0 => {
                // a payload that parses cleanly under another dimension means
                // the header dim field is the damaged part
                let remaining = (bytes.len() - header_end) as u64;
                let upper = (remaining / count.saturating_mul(4)).min(1 << 12) as usize;
                let actual = (1..=upper)
                    .filter(|&d| d != dim)
                    .find(|&d| parse_entries(bytes, header_end, d, count).is_ok());
                Err(match actual {
                    Some(d) => GalleryError::DimInconsistency(format!(
                        "header declares dimension {dim} but entries hold {d} values"
                    )),
                    None => e,
                })
            }
            Err(e) => Err(e),
        }
    }
}

fn parse_entries(
    bytes: &[u8],
    pos: usize,
    dim: usize,
    count: u64,
) -> Result<(Vec<GalleryEntry>, u64), GalleryError> {
    let mut r = ByteReader { bytes, pos };
    // each entry needs at least 16 header bytes plus its vector
    let min_entry = 16u64 + 4 * dim as u64;
    let remaining = (bytes.len() - r.pos) as u64;
    if count.saturating_mul(min_entry) > remaining {
        return Err(GalleryError::Truncated(format!(
            "{count} entries declared but only {remaining} bytes follow the header"
        )));
    }

    let mut entries = Vec::with_capacity(count as usize);
    let mut next_seq = 0u64;
    let mut seen = std::collections::HashSet::new();
    for k in 0..count {
        let identity = r.string("identity")?;
        let source_ref = r.string("source_ref")?;
        let enroll_seq = r.u64("enroll_seq")?;
        let raw = r.take(4 * dim, "embedding")?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let embedding = Embedding::new(values)
            .map_err(|e| GalleryError::Corrupt(format!("entry {k}: {e}")))?;
        if identity.is_empty() {
            return Err(GalleryError::Corrupt(format!("entry {k}: empty identity")));
        }
        if !seen.insert(enroll_seq) {
            return Err(GalleryError::Corrupt(format!(
                "duplicate enroll_seq {enroll_seq}"
            )));
        }
        next_seq = next_seq.max(enroll_seq + 1);
        entries.push(GalleryEntry {
            identity,
            embedding,
            source_ref,
            enroll_seq,
        });
    }
    if r.pos != bytes.len() {
        return Err(GalleryError::Corrupt(format!(
            "{} trailing bytes after {count} entries",
            bytes.len() - r.pos
        )));
    }
    Ok((entries, next_seq))
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], GalleryError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(GalleryError::Truncated(format!(
                "need {n} bytes for {what} at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32, GalleryError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64, GalleryError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String, GalleryError> {
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| GalleryError::Corrupt(format!("{what} is not valid UTF-8")))
    }
}

/// Reader-writer wrapper: concurrent `identify` calls, exclusive enrollment.
#[derive(Debug, Default)]
pub struct SharedGallery(RwLock<Gallery>);

impl SharedGallery {
    pub fn new(gallery: Gallery) -> Self {
        Self(RwLock::new(gallery))
    }

    pub fn read(&self) -> RwLockReadGuard<'_, Gallery> {
        self.0.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn write(&self) -> RwLockWriteGuard<'_, Gallery> {
        self.0.write().unwrap_or_else(|e| e.into_inner())
    }

    pub fn identify(
        &self,
        probe: &Embedding,
        threshold: Option<f64>,
    ) -> Result<MatchResult, GalleryError> {
        self.read().identify(probe, threshold)
    }

    pub fn enroll(
        &self,
        identity: impl Into<String>,
        embedding: Embedding,
        source_ref: impl Into<String>,
    ) -> Result<u64, GalleryError> {
        self.write().enroll(identity, embedding, source_ref)
    }

    /// Replace the contents atomically with a freshly loaded gallery.
    pub fn replace(&self, gallery: Gallery) {
        *self.write() = gallery;
    }

    pub fn into_inner(self) -> Gallery {
        self.0.into_inner().unwrap_or_else(|e| e.into_inner())
    }
}
