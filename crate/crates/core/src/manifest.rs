//! Line-delimited dataset manifest.
//!
//! One JSON object per line. An optional first line `{"schema_version": N}`
//! declares the format version; every other line is a [`ManifestRecord`].

use std::collections::{BTreeSet, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::BoundingBox;
use crate::landmarks::FaceLandmarks;

pub const SCHEMA_VERSION: u32 = 1;

const KNOWN_FIELDS: [&str; 7] = [
    "path",
    "identity",
    "source",
    "bbox",
    "landmarks",
    "video_id",
    "frame_index",
];

#[derive(Error, Debug)]
pub enum ManifestError {
    #[error("cannot read manifest: {0}")]
    Io(String),
    #[error("manifest line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("manifest line {line}: duplicate path {path:?}")]
    DuplicatePath { line: usize, path: String },
    #[error("manifest line {line}: unsupported schema version {found}")]
    Schema { line: usize, found: u32 },
    #[error("video ingestion: {0}")]
    Ingest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Photo,
    VideoFrame,
    Phone,
}

impl std::str::FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "photo" => Ok(Source::Photo),
            "video_frame" | "video" => Ok(Source::VideoFrame),
            "phone" => Ok(Source::Phone),
            other => Err(format!("unknown source {other:?} (photo, video_frame, phone)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub path: String,
    pub identity: String,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoundingBox>,
    /// Original-image coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<FaceLandmarks>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_index: Option<u64>,
}

impl ManifestRecord {
    pub fn new(path: impl Into<String>, identity: impl Into<String>, source: Source) -> Self {
        Self {
            path: path.into(),
            identity: identity.into(),
            source,
            bbox: None,
            landmarks: None,
            video_id: None,
            frame_index: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.path.is_empty() {
            return Err("empty path".into());
        }
        if self.identity.is_empty() {
            return Err("empty identity".into());
        }
        if let Some(b) = &self.bbox {
            b.validate().map_err(|e| e.to_string())?;
        }
        if let Some(lm) = &self.landmarks {
            lm.validate().map_err(|e| e.to_string())?;
        }
        match (self.source, self.frame_index) {
            (Source::VideoFrame, None) => Err("video_frame record without frame_index".into()),
            (Source::Photo | Source::Phone, Some(_)) => {
                Err("frame_index is only valid for video_frame records".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub records: Vec<ManifestRecord>,
    /// Unknown keys skipped while parsing.
    pub ignored_fields: usize,
}

impl DatasetManifest {
    pub fn new(records: Vec<ManifestRecord>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            records,
            ignored_fields: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Identities in order of first appearance.
    pub fn identities(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.identity.as_str()))
            .map(|r| r.identity.clone())
            .collect()
    }

    pub fn identity_count(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.identity.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Record indices grouped by identity, groups in first-appearance order.
    pub fn groups(&self) -> Vec<(String, Vec<usize>)> {
        let mut out: Vec<(String, Vec<usize>)> = Vec::new();
        let mut index = std::collections::HashMap::new();
        for (k, r) in self.records.iter().enumerate() {
            let slot = *index.entry(r.identity.as_str()).or_insert_with(|| {
                out.push((r.identity.clone(), Vec::new()));
                out.len() - 1
            });
            out[slot].1.push(k);
        }
        out
    }

    pub fn find(&self, path: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.path == path)
    }

    pub fn parse<R: BufRead>(reader: R) -> Result<Self, ManifestError> {
        let mut manifest = DatasetManifest::new(Vec::new());
        let mut paths = HashSet::new();
        for (k, line) in reader.lines().enumerate() {
            let line_no = k + 1;
            let line = line.map_err(|e| ManifestError::Io(e.to_string()))?;
            let text = line.trim();
            if text.is_empty() {
                continue;
            }
            let malformed = |message: String| ManifestError::Malformed {
                line: line_no,
                message,
            };
            let value: serde_json::Value =
                serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
            let obj = value
                .as_object()
                .ok_or_else(|| malformed("expected a JSON object".into()))?;
            if obj.len() == 1 && obj.contains_key("schema_version") {
                let v = obj["schema_version"]
                    .as_u64()
                    .ok_or_else(|| malformed("schema_version must be an integer".into()))?
                    as u32;
                if v != SCHEMA_VERSION {
                    return Err(ManifestError::Schema {
                        line: line_no,
                        found: v,
                    });
                }
                manifest.schema_version = v;
                continue;
            }
            manifest.ignored_fields += obj
                .keys()
                .filter(|k| !KNOWN_FIELDS.contains(&k.as_str()))
                .count();
            let record: ManifestRecord =
                serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
            record.validate().map_err(malformed)?;
            if !paths.insert(record.path.clone()) {
                return Err(ManifestError::DuplicatePath {
                    line: line_no,
                    path: record.path,
                });
            }
            manifest.records.push(record);
        }
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let file = std::fs::File::open(path)
            .map_err(|e| ManifestError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(std::io::BufReader::new(file))
    }

    pub fn write<W: Write>(&self, mut sink: W) -> std::io::Result<()> {
        writeln!(sink, "{{\"schema_version\":{}}}", self.schema_version)?;
        for r in &self.records {
            serde_json::to_writer(&mut sink, r)?;
            sink.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }
}

/// Keep every `stride`-th frame (0, stride, 2·stride, ...) of a clip.
pub fn ingest_video<S: AsRef<str>>(
    frames: &[S],
    stride: usize,
    identity: &str,
    video_id: &str,
) -> Result<Vec<ManifestRecord>, ManifestError> {
    if stride == 0 {
        return Err(ManifestError::Ingest("stride must be >= 1".into()));
    }
    if frames.is_empty() {
        return Err(ManifestError::Ingest(format!("video {video_id:?} has no frames")));
    }
    Ok(frames
        .iter()
        .enumerate()
        .step_by(stride)
        .map(|(k, path)| ManifestRecord {
            video_id: Some(video_id.to_string()),
            frame_index: Some(k as u64),
            ..ManifestRecord::new(path.as_ref(), identity, Source::VideoFrame)
        })
        .collect())
}
