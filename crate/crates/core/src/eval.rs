//! Evaluation protocols: identity-disjoint splits with a gallery/probe
//! halving of the test identities, CMC curves, genuine/imposter ROC, and
//! cross-validated rank-k identification tables.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gallery::{Embedding, Gallery, GalleryError};
use crate::manifest::DatasetManifest;
use crate::seeds;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum EvalError {
    #[error("need {need} identities, manifest has {have}")]
    InsufficientIdentities { have: usize, need: usize },
    #[error("test identity {identity:?} has {count} image(s); at least 2 are required")]
    InsufficientImages { identity: String, count: usize },
    #[error("requested {requested} {kind} pairs but only {available} distinct pairs exist")]
    InsufficientPairs {
        kind: &'static str,
        requested: u64,
        available: u64,
    },
    #[error("no {0} to evaluate")]
    Empty(&'static str),
    #[error("invalid evaluation parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Gallery(#[from] GalleryError),
    #[error("embedding {path}: {message}")]
    Embedding { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabeledImage {
    pub path: String,
    pub identity: String,
}

impl LabeledImage {
    pub fn new(path: impl Into<String>, identity: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            identity: identity.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_identities: usize,
    pub test_identities: usize,
    /// Share of each test identity's images held out as probes.
    pub probe_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_identities: 34,
            test_identities: 17,
            probe_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.train_identities == 0 || self.test_identities == 0 {
            return Err(EvalError::Params("identity counts must be >= 1".into()));
        }
        if !(self.probe_fraction > 0.0 && self.probe_fraction < 1.0) {
            return Err(EvalError::Params(format!(
                "probe_fraction must lie in (0, 1), got {}",
                self.probe_fraction
            )));
        }
        Ok(())
    }

    /// Probe share of `n` images: round half up, kept within `1..n`.
    pub fn probe_count(&self, n: usize) -> usize {
        let k = (self.probe_fraction * n as f64 + 0.5).floor() as usize;
        k.clamp(1, n.saturating_sub(1).max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSplit {
    pub spec: SplitSpec,
    pub train_identities: Vec<String>,
    pub test_identities: Vec<String>,
    /// Every image of the training identities.
    pub train: Vec<LabeledImage>,
    /// Every image of the test identities, manifest order.
    pub test: Vec<LabeledImage>,
    /// Training images plus the non-probe share of each test identity.
    pub gallery: Vec<LabeledImage>,
    pub probe: Vec<LabeledImage>,
}

impl EvalSplit {
    pub fn check_invariants(&self) -> Result<(), String> {
        let gallery: HashSet<&str> = self.gallery.iter().map(|g| g.path.as_str()).collect();
        if let Some(p) = self.probe.iter().find(|p| gallery.contains(p.path.as_str())) {
            return Err(format!("{} is in both gallery and probe", p.path));
        }
        let gallery_ids: HashSet<&str> = self.gallery.iter().map(|g| g.identity.as_str()).collect();
        if let Some(p) = self.probe.iter().find(|p| !gallery_ids.contains(p.identity.as_str())) {
            return Err(format!("probe identity {} has no gallery image", p.identity));
        }
        if let Some(t) = self.train.iter().find(|t| !gallery.contains(t.path.as_str())) {
            return Err(format!("training image {} missing from gallery", t.path));
        }
        if gallery.len() + self.probe.len() != self.train.len() + self.test.len() {
            return Err("gallery and probe do not partition train + test".into());
        }
        Ok(())
    }

    /// Re-draw the probe/gallery halving of the test identities with `seed`.
    pub fn redraw(&self, seed: u64) -> EvalSplit {
        let (gallery_part, probe) = halve(&self.test, &self.spec, seed);
        let mut gallery = self.train.clone();
        gallery.extend(gallery_part);
        EvalSplit {
            spec: SplitSpec { seed, ..self.spec },
            gallery,
            probe,
            ..self.clone()
        }
    }
}

fn group_by_identity(images: &[LabeledImage]) -> Vec<(String, Vec<LabeledImage>)> {
    let mut order: Vec<(String, Vec<LabeledImage>)> = Vec::new();
    let mut slot = HashMap::new();
    for img in images {
        let k = *slot.entry(img.identity.clone()).or_insert_with(|| {
            order.push((img.identity.clone(), Vec::new()));
            order.len() - 1
        });
        order[k].1.push(img.clone());
    }
    order
}

/// Per identity: shuffle with a seed derived from `(seed, identity)` and hold
/// the first `probe_count(n)` images out as probes.
fn halve(
    test: &[LabeledImage],
    spec: &SplitSpec,
    seed: u64,
) -> (Vec<LabeledImage>, Vec<LabeledImage>) {
    let mut gallery = Vec::new();
    let mut probe = Vec::new();
    for (identity, mut imgs) in group_by_identity(test) {
        let mut rng = seeds::rng(seeds::labeled(seed, &identity));
        imgs.shuffle(&mut rng);
        let k = spec.probe_count(imgs.len());
        let rest = imgs.split_off(k);
        probe.extend(imgs);
        gallery.extend(rest);
    }
    (gallery, probe)
}

pub fn make_split(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<EvalSplit, EvalError> {
    spec.validate()?;
    let mut identities = manifest.identities();
    let need = spec.train_identities + spec.test_identities;
    if identities.len() < need {
        return Err(EvalError::InsufficientIdentities {
            have: identities.len(),
            need,
        });
    }
    identities.shuffle(&mut seeds::rng(spec.seed));
    let train_ids: Vec<String> = identities[..spec.train_identities].to_vec();
    let test_ids: Vec<String> = identities[spec.train_identities..need].to_vec();

    let label = |r: &crate::manifest::ManifestRecord| LabeledImage::new(&r.path, &r.identity);
    let train_set: HashSet<&str> = train_ids.iter().map(String::as_str).collect();
    let test_set: HashSet<&str> = test_ids.iter().map(String::as_str).collect();
    let train: Vec<LabeledImage> = manifest
        .records
        .iter()
        .filter(|r| train_set.contains(r.identity.as_str()))
        .map(label)
        .collect();
    let test: Vec<LabeledImage> = manifest
        .records
        .iter()
        .filter(|r| test_set.contains(r.identity.as_str()))
        .map(label)
        .collect();
    for id in &test_ids {
        let count = test.iter().filter(|t| &t.identity == id).count();
        if count < 2 {
            return Err(EvalError::InsufficientImages {
                identity: id.clone(),
                count,
            });
        }
    }
    let (gallery_part, probe) = halve(&test, spec, spec.seed);
    let mut gallery = train.clone();
    gallery.extend(gallery_part);
    Ok(EvalSplit {
        spec: *spec,
        train_identities: train_ids,
        test_identities: test_ids,
        train,
        test,
        gallery,
        probe,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmcCurve {
    /// `rates[k - 1]` is the rank-k identification rate.
    pub rates: Vec<f64>,
    pub probes: usize,
}

impl CmcCurve {
    pub fn rate_at(&self, rank: usize) -> f64 {
        assert!(rank >= 1);
        self.rates[(rank - 1).min(self.rates.len() - 1)]
    }
}

/// Fraction of probes whose true identity appears within the top k, for
/// k = 1..=max_rank. `rankings[i]` lists identities best first.
pub fn compute_cmc<S: AsRef<str>>(
    rankings: &[Vec<S>],
    truth: &[S],
    max_rank: usize,
) -> Result<CmcCurve, EvalError> {
    if rankings.is_empty() {
        return Err(EvalError::Empty("probes"));
    }
    if rankings.len() != truth.len() {
        return Err(EvalError::Params(format!(
            "{} rankings for {} labels",
            rankings.len(),
            truth.len()
        )));
    }
    if max_rank == 0 {
        return Err(EvalError::Params("max_rank must be >= 1".into()));
    }
    let mut hits_at = vec![0usize; max_rank];
    for (ranking, t) in rankings.iter().zip(truth) {
        if let Some(pos) = ranking.iter().position(|id| id.as_ref() == t.as_ref()) {
            if pos < max_rank {
                hits_at[pos] += 1;
            }
        }
    }
    let n = rankings.len();
    let mut cum = 0usize;
    let rates = hits_at
        .iter()
        .map(|h| {
            cum += h;
            cum as f64 / n as f64
        })
        .collect();
    Ok(CmcCurve { rates, probes: n })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pair {
    pub a: LabeledImage,
    pub b: LabeledImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSample {
    pub genuine: Vec<Pair>,
    pub imposter: Vec<Pair>,
    pub seed: u64,
}

fn choose2(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

/// Unordered pair `(i, j)`, `i < j`, at position `t` of the row-major
/// enumeration of pairs among `m` items.
fn unrank_pair(mut t: u64, m: u64) -> (usize, usize) {
    let mut i = 0;
    loop {
        let row = m - 1 - i;
        if t < row {
            return (i as usize, (i + 1 + t) as usize);
        }
        t -= row;
        i += 1;
    }
}

/// Uniform sampling without replacement of `n_genuine` same-identity and
/// `n_imposter` cross-identity unordered pairs.
pub fn sample_pairs(
    images: &[LabeledImage],
    n_genuine: usize,
    n_imposter: usize,
    seed: u64,
) -> Result<PairSample, EvalError> {
    let groups = group_by_identity(images);
    let sizes: Vec<u64> = groups.iter().map(|(_, g)| g.len() as u64).collect();
    let genuine_total: u64 = sizes.iter().map(|&m| choose2(m)).sum();
    let imposter_total = choose2(images.len() as u64) - genuine_total;
    if n_genuine as u64 > genuine_total {
        return Err(EvalError::InsufficientPairs {
            kind: "genuine",
            requested: n_genuine as u64,
            available: genuine_total,
        });
    }
    if n_imposter as u64 > imposter_total {
        return Err(EvalError::InsufficientPairs {
            kind: "imposter",
            requested: n_imposter as u64,
            available: imposter_total,
        });
    }
    let mut rng = seeds::rng(seed);

    let mut prefix = Vec::with_capacity(sizes.len());
    let mut acc = 0u64;
    for &m in &sizes {
        prefix.push(acc);
        acc += choose2(m);
    }
    let genuine = index::sample(&mut rng, genuine_total as usize, n_genuine)
        .into_iter()
        .map(|t| {
            let t = t as u64;
            let g = prefix.partition_point(|&p| p <= t) - 1;
            let (i, j) = unrank_pair(t - prefix[g], sizes[g]);
            let imgs = &groups[g].1;
            Pair {
                a: imgs[i].clone(),
                b: imgs[j].clone(),
            }
        })
        .collect();

    let n = images.len();
    let all_pairs = choose2(n as u64);
    let dense = imposter_total * 20 >= all_pairs && (n_imposter as u64) * 2 <= imposter_total;
    let imposter_idx: Vec<(usize, usize)> = if dense {
        let mut taken = HashSet::with_capacity(n_imposter);
        let mut out = Vec::with_capacity(n_imposter);
        while out.len() < n_imposter {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            if i == j || images[i].identity == images[j].identity {
                continue;
            }
            let key = (i.min(j), i.max(j));
            if taken.insert(key) {
                out.push(key);
            }
        }
        out
    } else {
        let mut all = Vec::with_capacity(imposter_total as usize);
        for i in 0..n {
            for j in i + 1..n {
                if images[i].identity != images[j].identity {
                    all.push((i, j));
                }
            }
        }
        index::sample(&mut rng, all.len(), n_imposter)
            .into_iter()
            .map(|t| all[t])
            .collect()
    };
    let imposter = imposter_idx
        .into_iter()
        .map(|(i, j)| Pair {
            a: images[i].clone(),
            b: images[j].clone(),
        })
        .collect();
    Ok(PairSample {
        genuine,
        imposter,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Accept when score >= threshold; the first and last points use ±inf.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// Ordered by descending threshold.
    pub points: Vec<RocPoint>,
    pub auc: f64,
    auc_num: u128,
    auc_den: u128,
}

impl RocCurve {
    /// AUC as an exact fraction of counts.
    pub fn auc_rational(&self) -> (u128, u128) {
        (self.auc_num, self.auc_den)
    }
}

/// Sweep thresholds over every distinct score (plus ±inf) and integrate the
/// resulting staircase with the trapezoidal rule.
pub fn compute_roc(genuine: &[f64], imposter: &[f64]) -> Result<RocCurve, EvalError> {
    if genuine.is_empty() {
        return Err(EvalError::Empty("genuine scores"));
    }
    if imposter.is_empty() {
        return Err(EvalError::Empty("imposter scores"));
    }
    if genuine.iter().chain(imposter).any(|s| s.is_nan()) {
        return Err(EvalError::Params("NaN score".into()));
    }
    let mut events: Vec<(f64, bool)> = genuine
        .iter()
        .map(|&s| (s, true))
        .chain(imposter.iter().map(|&s| (s, false)))
        .collect();
    events.sort_by(|a, b| b.0.total_cmp(&a.0));

    let (g, i) = (genuine.len() as u128, imposter.len() as u128);
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0u128, 0u128);
    let mut num = 0u128;
    let mut k = 0;
    while k < events.len() {
        let t = events[k].0;
        let (tp0, fp0) = (tp, fp);
        while k < events.len() && events[k].0 == t {
            if events[k].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        num += (fp - fp0) * (tp + tp0);
        points.push(RocPoint {
            fpr: fp as f64 / i as f64,
            tpr: tp as f64 / g as f64,
            threshold: t,
        });
    }
    points.push(RocPoint {
        fpr: 1.0,
        tpr: 1.0,
        threshold: f64::NEG_INFINITY,
    });
    let den = 2 * g * i;
    Ok(RocCurve {
        points,
        auc: num as f64 / den as f64,
        auc_num: num,
        auc_den: den,
    })
}

pub const TABLE_RANKS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub ranks: Vec<usize>,
    /// Percentages, one row per fold.
    pub folds: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Sample (n - 1) standard deviation.
    pub std: Vec<f64>,
}

impl fmt::Display for RankTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let header: Vec<String> = self.ranks.iter().map(|r| format!("Rank-{r} (%)")).collect();
        writeln!(f, "{:<8} | {}", "Fold", header.join(" | "))?;
        for (k, row) in self.folds.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .zip(&header)
                .map(|(v, h)| format!("{:>w$.1}", v, w = h.len()))
                .collect();
            writeln!(f, "{:<8} | {}", k + 1, cells.join(" | "))?;
        }
        let cells: Vec<String> = self
            .mean
            .iter()
            .zip(&self.std)
            .zip(&header)
            .map(|((m, s), h)| format!("{:>w$}", format!("{m:.1}±{s:.1}"), w = h.len()))
            .collect();
        write!(f, "{:<8} | {}", "mean±std", cells.join(" | "))
    }
}

pub fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Rank-k identification rates over `folds` re-draws of the test halving
/// (fold f uses seed `split.spec.seed + f`). `embed` is called once per image.
pub fn rank_k_table<F>(
    split: &EvalSplit,
    embed: F,
    folds: usize,
    ranks: &[usize],
) -> Result<RankTable, EvalError>
where
    F: Fn(&LabeledImage) -> Result<Embedding, String> + Sync,
{
    if folds < 2 {
        return Err(EvalError::Params(format!("folds must be >= 2, got {folds}")));
    }
    if ranks.is_empty() || ranks.contains(&0) {
        return Err(EvalError::Params("ranks must be >= 1".into()));
    }
    let everything: Vec<&LabeledImage> = split.train.iter().chain(&split.test).collect();
    let embedded: Vec<Embedding> = everything
        .par_iter()
        .map(|img| {
            embed(img).map_err(|message| EvalError::Embedding {
                path: img.path.clone(),
                message,
            })
        })
        .collect::<Result<_, _>>()?;
    let cache: HashMap<&str, &Embedding> = everything
        .iter()
        .map(|i| i.path.as_str())
        .zip(embedded.iter())
        .collect();
    let max_rank = *ranks.iter().max().expect("non-empty");

    let mut rows = Vec::with_capacity(folds);
    for f in 0..folds {
        let fold = split.redraw(split.spec.seed.wrapping_add(f as u64));
        let mut gallery = Gallery::new();
        for g in &fold.gallery {
            gallery.enroll(&g.identity, cache[g.path.as_str()].clone(), &g.path)?;
        }
        let rankings: Vec<Vec<String>> = fold
            .probe
            .par_iter()
            .map(|p| Ok(gallery.identify(cache[p.path.as_str()], None)?.identities()))
            .collect::<Result<_, EvalError>>()?;
        let truth: Vec<String> = fold.probe.iter().map(|p| p.identity.clone()).collect();
        let cmc = compute_cmc(&rankings, &truth, max_rank)?;
        rows.push(ranks.iter().map(|&r| 100.0 * cmc.rate_at(r)).collect::<Vec<f64>>());
    }
    let (mean, std) = (0..ranks.len())
        .map(|c| mean_and_sample_std(&rows.iter().map(|r| r[c]).collect::<Vec<_>>()))
        .unzip();
    Ok(RankTable {
        ranks: ranks.to_vec(),
        folds: rows,
        mean,
        std,
    })
}

/// Image count per identity, sorted by label.
pub fn images_per_identity(images: &[LabeledImage]) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for i in images {
        *m.entry(i.identity.as_str()).or_insert(0) += 1;
    }
    m
}
