//! Greedy SSIM filtering of correlated images within each individual.
//!
//! Starting from a seed-chosen image, the remaining images are visited in
//! manifest order (cyclically from the start). A candidate is kept only if
//! its SSIM against every image kept so far stays below the threshold.
//! Identities are never compared against each other.

use std::collections::HashSet;
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{ssim_prepared, ImageBuffer, SsimParams, SsimPrepared};
use crate::manifest::{DatasetManifest, ManifestRecord, Source};
use crate::seeds;

pub const DEFAULT_THRESHOLD: f64 = 0.6;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum DedupError {
    #[error("individual {0:?} has no images")]
    EmptyIndividual(String),
    #[error("invalid dedup parameters: {0}")]
    Params(String),
    #[error("identity {identity:?}: cannot load {path}: {message}")]
    Image {
        identity: String,
        path: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupParams {
    pub threshold: f64,
    pub seed: u64,
    pub ssim: SsimParams,
    /// Sources subject to filtering; images from other sources are kept
    /// untouched. `None` filters every image.
    pub sources: Option<Vec<Source>>,
}

impl Default for DedupParams {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
            ssim: SsimParams::default(),
            sources: Some(vec![Source::VideoFrame]),
        }
    }
}

impl DedupParams {
    pub fn validate(&self) -> Result<(), DedupError> {
        if !self.threshold.is_finite() {
            return Err(DedupError::Params(format!(
                "threshold must be finite, got {}",
                self.threshold
            )));
        }
        self.ssim.validate().map_err(DedupError::Params)
    }

    fn filters(&self, source: Source) -> bool {
        self.sources.as_ref().is_none_or(|s| s.contains(&source))
    }
}

/// Seed-chosen starting position among `n` images.
pub fn start_index(n: usize, seed: u64) -> usize {
    assert!(n > 0);
    seeds::rng(seed).gen_range(0..n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyOutcome {
    pub start: usize,
    /// Kept indices in ascending order.
    pub retained: Vec<usize>,
    /// `(index, retained index it matched, score)` in ascending index order.
    pub discarded: Vec<(usize, usize, f64)>,
    pub comparisons: u64,
}

/// The greedy loop over indices `0..n`, with `similarity(candidate, kept)`
/// supplied by the caller. Stops comparing a candidate at the first kept
/// image reaching the threshold.
pub fn greedy_filter(
    n: usize,
    start: usize,
    threshold: f64,
    mut similarity: impl FnMut(usize, usize) -> f64,
) -> GreedyOutcome {
    assert!(start < n);
    let mut kept = vec![start];
    let mut discarded = Vec::new();
    let mut comparisons = 0;
    for step in 1..n {
        let cand = (start + step) % n;
        let mut hit = None;
        for &r in &kept {
            comparisons += 1;
            let s = similarity(cand, r);
            if s >= threshold {
                hit = Some((r, s));
                break;
            }
        }
        match hit {
            Some((r, s)) => discarded.push((cand, r, s)),
            None => kept.push(cand),
        }
    }
    kept.sort_unstable();
    discarded.sort_by_key(|d| d.0);
    GreedyOutcome {
        start,
        retained: kept,
        discarded,
        comparisons,
    }
}

/// Dedup one individual's images with the start drawn from `params.seed`.
pub fn dedup_individual(
    images: &[ImageBuffer],
    params: &DedupParams,
) -> Result<GreedyOutcome, DedupError> {
    params.validate()?;
    if images.is_empty() {
        return Err(DedupError::EmptyIndividual(String::new()));
    }
    let prepared: Vec<SsimPrepared> = images
        .iter()
        .map(|img| SsimPrepared::new(img, &params.ssim))
        .collect();
    let start = start_index(images.len(), params.seed);
    Ok(greedy_filter(images.len(), start, params.threshold, |a, b| {
        ssim_prepared(&prepared[a], &prepared[b], &params.ssim)
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscardedRef {
    pub path: String,
    /// Kept image it was too similar to.
    pub matched: String,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityDedup {
    pub identity: String,
    pub start: Option<String>,
    pub retained: Vec<String>,
    pub discarded: Vec<DiscardedRef>,
    /// Images from sources outside the filter, kept without comparison.
    pub exempt: Vec<String>,
    pub retained_count: usize,
    pub discarded_count: usize,
    pub ssim_calls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupTotals {
    pub identities: usize,
    pub input: usize,
    pub retained: usize,
    pub discarded: usize,
    pub exempt: usize,
    pub ssim_calls: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DedupReport {
    pub params: DedupParams,
    pub identities: Vec<IdentityDedup>,
    pub totals: DedupTotals,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ReportLine {
    Params(DedupParams),
    Identity(IdentityDedup),
    Totals(DedupTotals),
}

impl DedupReport {
    /// Kept paths (retained and exempt) across all identities.
    pub fn kept_paths(&self) -> HashSet<&str> {
        self.identities
            .iter()
            .flat_map(|i| i.retained.iter().chain(&i.exempt))
            .map(String::as_str)
            .collect()
    }

    /// Manifest restricted to kept records, original order preserved.
    pub fn cleaned_manifest(&self, manifest: &DatasetManifest) -> DatasetManifest {
        let keep = self.kept_paths();
        DatasetManifest::new(
            manifest
                .records
                .iter()
                .filter(|r| keep.contains(r.path.as_str()))
                .cloned()
                .collect(),
        )
    }

    /// Params line first (threshold echoed), one line per identity, totals last.
    pub fn write_jsonl<W: Write>(&self, mut sink: W) -> std::io::Result<()> {
        let mut line = |l: &ReportLine| -> std::io::Result<()> {
            serde_json::to_writer(&mut sink, l)?;
            sink.write_all(b"\n")
        };
        line(&ReportLine::Params(self.params.clone()))?;
        for i in &self.identities {
            line(&ReportLine::Identity(i.clone()))?;
        }
        line(&ReportLine::Totals(self.totals.clone()))
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf-8")
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, String> {
        let mut params = None;
        let mut identities = Vec::new();
        let mut totals = None;
        for (k, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            match serde_json::from_str(line).map_err(|e| format!("line {}: {e}", k + 1))? {
                ReportLine::Params(p) => params = Some(p),
                ReportLine::Identity(i) => identities.push(i),
                ReportLine::Totals(t) => totals = Some(t),
            }
        }
        Ok(Self {
            params: params.ok_or("missing params line")?,
            identities,
            totals: totals.ok_or("missing totals line")?,
        })
    }
}

/// Dedup every identity of `manifest` independently (in parallel).
/// `load` turns a record into pixels.
pub fn dedup_dataset<L>(
    manifest: &DatasetManifest,
    params: &DedupParams,
    load: L,
) -> Result<DedupReport, DedupError>
where
    L: Fn(&ManifestRecord) -> Result<ImageBuffer, String> + Sync,
{
    params.validate()?;
    let calls = AtomicU64::new(0);
    let groups = manifest.groups();
    let per_identity: Vec<Result<IdentityDedup, DedupError>> = groups
        .par_iter()
        .map(|(identity, idx)| {
            let records: Vec<&ManifestRecord> = idx.iter().map(|&k| &manifest.records[k]).collect();
            let (subject, exempt): (Vec<&ManifestRecord>, Vec<&ManifestRecord>) =
                records.into_iter().partition(|r| params.filters(r.source));
            let exempt: Vec<String> = exempt.iter().map(|r| r.path.clone()).collect();
            if subject.is_empty() {
                return Ok(IdentityDedup {
                    identity: identity.clone(),
                    start: None,
                    retained: Vec::new(),
                    discarded: Vec::new(),
                    exempt,
                    retained_count: 0,
                    discarded_count: 0,
                    ssim_calls: 0,
                });
            }
            let prepared = subject
                .iter()
                .map(|r| {
                    load(r)
                        .map(|img| SsimPrepared::new(&img, &params.ssim))
                        .map_err(|message| DedupError::Image {
                            identity: identity.clone(),
                            path: r.path.clone(),
                            message,
                        })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let start = start_index(subject.len(), seeds::labeled(params.seed, identity));
            let out = greedy_filter(subject.len(), start, params.threshold, |a, b| {
                calls.fetch_add(1, Ordering::Relaxed);
                ssim_prepared(&prepared[a], &prepared[b], &params.ssim)
            });
            Ok(IdentityDedup {
                identity: identity.clone(),
                start: Some(subject[out.start].path.clone()),
                retained: out.retained.iter().map(|&k| subject[k].path.clone()).collect(),
                discarded: out
                    .discarded
                    .iter()
                    .map(|&(k, m, s)| DiscardedRef {
                        path: subject[k].path.clone(),
                        matched: subject[m].path.clone(),
                        ssim: s,
                    })
                    .collect(),
                exempt,
                retained_count: out.retained.len(),
                discarded_count: out.discarded.len(),
                ssim_calls: out.comparisons,
            })
        })
        .collect();
    let identities = per_identity.into_iter().collect::<Result<Vec<_>, _>>()?;
    let totals = DedupTotals {
        identities: identities.len(),
        input: manifest.len(),
        retained: identities.iter().map(|i| i.retained_count).sum(),
        discarded: identities.iter().map(|i| i.discarded_count).sum(),
        exempt: identities.iter().map(|i| i.exempt.len()).sum(),
        ssim_calls: calls.into_inner(),
    };
    Ok(DedupReport {
        params: params.clone(),
        identities,
        totals,
    })
}
