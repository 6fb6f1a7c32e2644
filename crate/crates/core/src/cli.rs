//! Command-line front end.
//!
//! Exit codes: 0 success, 2 data error, 3 provider error, 4 no-face or
//! landmark failure. Every output file is written to a temporary sibling
//! and renamed into place.

use std::collections::HashMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::align::{align_face, AlignError, AlignParams};
use crate::dedup::{dedup_dataset, DedupParams, DEFAULT_THRESHOLD};
use crate::eval::{
    compute_cmc, compute_roc, make_split, rank_k_table, sample_pairs, EvalSplit, LabeledImage,
    SplitSpec, TABLE_RANKS,
};
use crate::gallery::{cosine_similarity, Embedding, Gallery};
use crate::imaging::io::{load_image, save_image};
use crate::imaging::{ImageBuffer, SsimParams};
use crate::landmarks::{localization_error, FaceLandmarks};
use crate::manifest::{ingest_video, DatasetManifest, ManifestRecord, Source};
use crate::pipeline::{locate_face, process_face, run_pipeline, PipelineConfig, PipelineError};
use crate::providers::{ProviderRegistry, ProviderSelection, Providers};
use crate::seeds::{self, Subsystem};
use crate::synthetic::{SyntheticDataset, SyntheticSpec};

#[derive(Error, Debug)]
pub enum CliError {
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Provider(String),
    #[error("{0}")]
    NoFace(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Data(_) => 2,
            CliError::Provider(_) => 3,
            CliError::NoFace(_) => 4,
        }
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match &e {
            PipelineError::NoFace { .. } | PipelineError::Landmarks { .. } => {
                CliError::NoFace(e.to_string())
            }
            PipelineError::Align {
                source: AlignError::DegenerateLandmarks(_),
                ..
            } => CliError::NoFace(e.to_string()),
            PipelineError::Provider { .. } => CliError::Provider(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "pandaid", version, about = "Individual identification from animal face images")]
pub struct Cli {
    /// Top-level seed; every random choice derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for batch commands (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// `mock` or `external:<spec>`.
    #[arg(long, global = true, default_value = "mock")]
    pub provider: ProviderSelection,
    /// Record every pipeline stage in the outputs.
    #[arg(long, global = true)]
    pub trace: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build or check dataset manifests.
    #[command(subcommand)]
    Ingest(IngestCommand),
    /// Drop near-duplicate images per identity.
    Dedup(DedupArgs),
    /// Identity-disjoint train/test split with gallery/probe halving.
    Split(SplitArgs),
    /// Write eye-aligned face crops.
    Align(AlignArgs),
    /// Embed images and store them in a gallery file.
    Enroll(EnrollArgs),
    /// Match images against a gallery.
    Identify(IdentifyArgs),
    /// Evaluation curves and tables.
    #[command(subcommand)]
    Evaluate(EvaluateCommand),
}

#[derive(Subcommand, Debug)]
pub enum IngestCommand {
    /// Keep every `stride`-th frame of a directory of extracted video frames.
    Video {
        #[arg(long)]
        frames_dir: PathBuf,
        #[arg(long, default_value_t = 10)]
        stride: usize,
        #[arg(long)]
        identity: String,
        /// Defaults to the frame directory name.
        #[arg(long)]
        video_id: Option<String>,
        /// Manifest to write; paths are stored relative to its directory.
        #[arg(long)]
        out: PathBuf,
        /// Add to an existing manifest instead of replacing it.
        #[arg(long)]
        append: bool,
    },
    /// Validate a manifest and print a summary.
    Check {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Render a synthetic dataset (images and manifest) into a directory.
    Synthetic {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 51)]
        identities: usize,
        #[arg(long, default_value_t = 2877)]
        total: usize,
    },
}

#[derive(Args, Debug)]
pub struct DedupArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Report path (line-delimited JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated sources to filter, or `all`.
    #[arg(long, default_value = "video_frame")]
    pub sources: String,
    /// Side images are resized to before comparison.
    #[arg(long, default_value_t = 256)]
    pub compare_size: usize,
    /// Also write the manifest restricted to kept images.
    #[arg(long)]
    pub cleaned_manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 34)]
    pub train: usize,
    #[arg(long, default_value_t = 17)]
    pub test: usize,
    #[arg(long, default_value_t = 0.5)]
    pub probe_fraction: f64,
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "a=1.3,b=1.7,c=1.2")]
    pub params: String,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Locate landmarks with the providers even when the manifest has them.
    #[arg(long)]
    pub detect: bool,
}

#[derive(Args, Debug)]
pub struct EnrollArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Enroll the split's gallery set instead of every record.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub gallery: PathBuf,
    /// Add to an existing gallery file.
    #[arg(long)]
    pub append: bool,
    #[arg(long, default_value = "a=1.3,b=1.7,c=1.2")]
    pub params: String,
}

#[derive(Args, Debug)]
pub struct IdentifyArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub gallery: PathBuf,
    /// Use the split's probe set as queries.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Manifest paths to identify.
    #[arg(long = "image")]
    pub images: Vec<String>,
    /// Reject matches scoring below this similarity.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "a=1.3,b=1.7,c=1.2")]
    pub params: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Population {
    /// Images of the test identities only.
    Test,
    /// Every image in the split (train and test identities).
    All,
}

#[derive(Subcommand, Debug)]
pub enum EvaluateCommand {
    /// Cumulative match characteristic of the split's probes against a gallery.
    Cmc {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        gallery: PathBuf,
        #[arg(long, default_value_t = 10)]
        max_rank: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verification ROC over sampled genuine and imposter pairs.
    Roc {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long, value_enum)]
        population: Population,
        #[arg(long, default_value_t = 1000)]
        genuine: usize,
        #[arg(long, default_value_t = 1000)]
        imposter: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank-1/5/10 identification rates over re-drawn folds.
    Ranks {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long, default_value_t = 3)]
        folds: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Landmark localization error against manifest annotations.
    Landmarks {
        #[arg(long)]
        manifest: PathBuf,
        /// Line-delimited `{"path", "landmarks"}` records; default runs the providers.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Write `bytes` to a temporary sibling of `path`, then rename it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&parent).map_err(|e| data(format!("{}: {e}", parent.display())))?;
    let name = path
        .file_name()
        .ok_or_else(|| data(format!("not a file path: {}", path.display())))?
        .to_string_lossy();
    let tmp = parent.join(format!(".{name}.{}.tmp", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| data(format!("{}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r).map_err(data)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

fn save_image_atomic(img: &ImageBuffer, path: &Path) -> Result<(), CliError> {
    let parent = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(parent).map_err(|e| data(format!("{}: {e}", parent.display())))?;
    let name = path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default();
    // keep the extension last so the encoder is chosen by it
    let tmp = parent.join(format!(".tmp.{}.{name}", std::process::id()));
    save_image(img, &tmp).map_err(data)?;
    std::fs::rename(&tmp, path).map_err(|e| data(format!("{}: {e}", path.display())))
}

/// Loaded manifest plus the directory its relative paths resolve against.
struct Dataset {
    manifest: DatasetManifest,
    root: PathBuf,
    index: HashMap<String, usize>,
}

impl Dataset {
    fn open(path: &Path) -> Result<Self, CliError> {
        let manifest = DatasetManifest::load(path).map_err(data)?;
        if manifest.ignored_fields > 0 {
            eprintln!(
                "warning: {} unknown manifest field(s) ignored",
                manifest.ignored_fields
            );
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let index = manifest
            .records
            .iter()
            .enumerate()
            .map(|(k, r)| (r.path.clone(), k))
            .collect();
        Ok(Self {
            manifest,
            root,
            index,
        })
    }

    fn record(&self, path: &str) -> Result<&ManifestRecord, CliError> {
        self.index
            .get(path)
            .map(|&k| &self.manifest.records[k])
            .ok_or_else(|| data(format!("{path:?} is not in the manifest")))
    }

    fn load(&self, path: &str) -> Result<ImageBuffer, CliError> {
        load_image(&self.root.join(path)).map_err(data)
    }
}

struct Context {
    trace: bool,
    providers: Providers,
}

impl Context {
    fn config(&self, params: &str) -> Result<PipelineConfig, CliError> {
        Ok(PipelineConfig {
            align: AlignParams::parse(params).map_err(data)?,
            threshold: None,
            trace: self.trace,
        })
    }

    /// Embeddings for `paths` in input order, computed in parallel.
    fn embed_all(
        &self,
        ds: &Dataset,
        paths: &[&str],
        config: &PipelineConfig,
    ) -> Result<Vec<Embedding>, CliError> {
        paths
            .par_iter()
            .map(|p| {
                let img = ds.load(p)?;
                Ok(process_face(&self.providers, p, &img, config)?.embedding)
            })
            .collect()
    }
}

fn load_split(path: &Path) -> Result<EvalSplit, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    let split: EvalSplit = serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", path.display())))?;
    split.check_invariants().map_err(data)?;
    Ok(split)
}

fn load_gallery(path: &Path) -> Result<Gallery, CliError> {
    let bytes = std::fs::read(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    Gallery::from_bytes(&bytes).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn parse_sources(spec: &str) -> Result<Option<Vec<Source>>, CliError> {
    if spec == "all" {
        return Ok(None);
    }
    spec.split(',')
        .map(|s| s.trim().parse::<Source>().map_err(data))
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

fn threshold_json(t: f64) -> serde_json::Value {
    if t.is_finite() {
        json!(t)
    } else if t > 0.0 {
        json!("+inf")
    } else {
        json!("-inf")
    }
}

fn cmd_ingest(cmd: IngestCommand) -> Result<(), CliError> {
    match cmd {
        IngestCommand::Video {
            frames_dir,
            stride,
            identity,
            video_id,
            out,
            append,
        } => {
            let mut frames: Vec<PathBuf> = std::fs::read_dir(&frames_dir)
                .map_err(|e| data(format!("{}: {e}", frames_dir.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            frames.sort();
            let root = out.parent().map(Path::to_path_buf).unwrap_or_default();
            let names: Vec<String> = frames
                .iter()
                .map(|p| {
                    p.strip_prefix(&root)
                        .unwrap_or(p)
                        .to_string_lossy()
                        .into_owned()
                })
                .collect();
            let video_id = video_id.unwrap_or_else(|| {
                frames_dir
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "video".into())
            });
            let records = ingest_video(&names, stride, &identity, &video_id).map_err(data)?;
            let mut manifest = if append && out.exists() {
                DatasetManifest::load(&out).map_err(data)?
            } else {
                DatasetManifest::new(Vec::new())
            };
            let added = records.len();
            manifest.records.extend(records);
            // re-parse to catch duplicate paths before anything is written
            let text = manifest.to_jsonl();
            DatasetManifest::parse(text.as_bytes()).map_err(data)?;
            write_atomic(&out, text.as_bytes())?;
            println!("{}", json!({"added": added, "records": manifest.len()}));
            Ok(())
        }
        IngestCommand::Check { manifest } => {
            let m = DatasetManifest::load(&manifest).map_err(data)?;
            let mut by_source: std::collections::BTreeMap<String, usize> = Default::default();
            for r in &m.records {
                let key = serde_json::to_value(r.source).map_err(data)?;
                *by_source.entry(key.as_str().unwrap_or("?").to_string()).or_default() += 1;
            }
            println!(
                "{}",
                json!({
                    "records": m.len(),
                    "identities": m.identity_count(),
                    "ignored_fields": m.ignored_fields,
                    "sources": by_source,
                })
            );
            Ok(())
        }
        IngestCommand::Synthetic {
            out_dir,
            identities,
            total,
        } => {
            if identities == 0 || total < identities {
                return Err(data("need at least one image per identity"));
            }
            let spec = SyntheticSpec {
                identities,
                total_images: Some(total),
                ..SyntheticSpec::default()
            };
            SyntheticDataset::generate(&spec)
                .write_to(&out_dir)
                .map_err(data)?;
            println!("{}", json!({"records": total, "identities": identities}));
            Ok(())
        }
    }
}

fn cmd_dedup(seed: u64, args: DedupArgs) -> Result<(), CliError> {
    let ds = Dataset::open(&args.manifest)?;
    let params = DedupParams {
        threshold: args.threshold,
        seed: seeds::derive(seed, Subsystem::Dedup),
        ssim: SsimParams {
            compare_size: args.compare_size,
            ..SsimParams::default()
        },
        sources: parse_sources(&args.sources)?,
    };
    let report = dedup_dataset(&ds.manifest, &params, |r| {
        load_image(&ds.root.join(&r.path)).map_err(|e| e.to_string())
    })
    .map_err(data)?;
    write_atomic(&args.out, report.to_jsonl().as_bytes())?;
    if let Some(path) = &args.cleaned_manifest {
        write_atomic(path, report.cleaned_manifest(&ds.manifest).to_jsonl().as_bytes())?;
    }
    println!("{}", serde_json::to_string(&report.totals).map_err(data)?);
    Ok(())
}

fn cmd_split(seed: u64, args: SplitArgs) -> Result<(), CliError> {
    let ds = Dataset::open(&args.manifest)?;
    let spec = SplitSpec {
        train_identities: args.train,
        test_identities: args.test,
        probe_fraction: args.probe_fraction,
        seed: seeds::derive(seed, Subsystem::Split),
    };
    let split = make_split(&ds.manifest, &spec).map_err(data)?;
    let mut text = serde_json::to_string_pretty(&split).map_err(data)?;
    text.push('\n');
    write_atomic(&args.out, text.as_bytes())?;
    println!(
        "{}",
        json!({
            "train_images": split.train.len(),
            "gallery_images": split.gallery.len(),
            "probe_images": split.probe.len(),
        })
    );
    Ok(())
}

#[derive(Serialize)]
struct AlignRecord<'a> {
    path: &'a str,
    output: String,
    /// Source to aligned coordinates, row-major `[m00, m01, m02, m10, m11, m12]`.
    affine: [f64; 6],
    rotation_angle: f64,
    landmarks: FaceLandmarks,
    aligned_landmarks: FaceLandmarks,
}

fn cmd_align(ctx: &Context, args: AlignArgs) -> Result<(), CliError> {
    let ds = Dataset::open(&args.manifest)?;
    let params = AlignParams::parse(&args.params).map_err(data)?;
    let rows: Vec<AlignRecord> = ds
        .manifest
        .records
        .par_iter()
        .map(|r| {
            let img = ds.load(&r.path)?;
            let lm = match r.landmarks {
                Some(lm) if !args.detect => lm,
                _ => locate_face(&ctx.providers, &r.path, &img, false)?.landmarks,
            };
            let aligned = align_face(&img, &lm, &params).map_err(|e| match e {
                AlignError::DegenerateLandmarks(_) => CliError::NoFace(format!("{}: {e}", r.path)),
                e => data(format!("{}: {e}", r.path)),
            })?;
            let output = Path::new(&r.path).with_extension("png");
            save_image_atomic(&aligned.image, &args.out_dir.join(&output))?;
            Ok(AlignRecord {
                path: &r.path,
                output: output.to_string_lossy().into_owned(),
                affine: aligned.transform.coefficients(),
                rotation_angle: aligned.rotation_angle,
                landmarks: lm,
                aligned_landmarks: aligned.aligned_landmarks(),
            })
        })
        .collect::<Result<_, CliError>>()?;
    write_jsonl(&args.out_dir.join("aligned.jsonl"), &rows)?;
    println!("{}", json!({"aligned": rows.len()}));
    Ok(())
}

fn cmd_enroll(ctx: &Context, args: EnrollArgs) -> Result<(), CliError> {
    let ds = Dataset::open(&args.manifest)?;
    let config = ctx.config(&args.params)?;
    let targets: Vec<LabeledImage> = match &args.split {
        Some(p) => load_split(p)?.gallery,
        None => ds
            .manifest
            .records
            .iter()
            .map(|r| LabeledImage::new(&r.path, &r.identity))
            .collect(),
    };
    for t in &targets {
        ds.record(&t.path)?;
    }
    let paths: Vec<&str> = targets.iter().map(|t| t.path.as_str()).collect();
    let embeddings = ctx.embed_all(&ds, &paths, &config)?;
    let mut gallery = if args.append && args.gallery.exists() {
        load_gallery(&args.gallery)?
    } else {
        Gallery::new()
    };
    for (t, e) in targets.iter().zip(embeddings) {
        gallery.enroll(&t.identity, e, &t.path).map_err(data)?;
    }
    let mut bytes = Vec::new();
    gallery.save(&mut bytes).map_err(data)?;
    write_atomic(&args.gallery, &bytes)?;
    println!(
        "{}",
        json!({"enrolled": targets.len(), "entries": gallery.len(), "identities": gallery.identity_count()})
    );
    Ok(())
}

fn cmd_identify(ctx: &Context, args: IdentifyArgs) -> Result<(), CliError> {
    let ds = Dataset::open(&args.manifest)?;
    let gallery = load_gallery(&args.gallery)?;
    let config = PipelineConfig {
        threshold: args.threshold,
        ..ctx.config(&args.params)?
    };
    let mut queries: Vec<String> = match &args.split {
        Some(p) => load_split(p)?.probe.into_iter().map(|p| p.path).collect(),
        None => Vec::new(),
    };
    queries.extend(args.images.iter().cloned());
    if queries.is_empty() {
        return Err(data("nothing to identify: pass --split or --image"));
    }
    let rows: Vec<serde_json::Value> = queries
        .par_iter()
        .map(|q| {
            let rec = ds.record(q)?;
            let img = ds.load(q)?;
            let out = run_pipeline(&ctx.providers, &gallery, q, &img, &config)?;
            let ranking: Vec<_> = out.result.ranking.iter().take(args.top_k).collect();
            let mut row = json!({
                "path": q,
                "truth": rec.identity,
                "decision": out.result.decision,
                "threshold": out.result.threshold_used,
                "ranking": ranking,
            });
            if ctx.trace {
                row["trace"] = serde_json::to_value(&out.face.trace).map_err(data)?;
                row["landmarks"] = serde_json::to_value(out.face.landmarks).map_err(data)?;
                row["detection"] = serde_json::to_value(out.face.detection).map_err(data)?;
            }
            Ok(row)
        })
        .collect::<Result<_, CliError>>()?;
    write_jsonl(&args.out, &rows)?;
    let correct = rows
        .iter()
        .filter(|r| r["decision"]["identity"] == r["truth"])
        .count();
    println!("{}", json!({"queries": rows.len(), "identified_correctly": correct}));
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct PredictionRecord {
    path: String,
    landmarks: FaceLandmarks,
}

fn cmd_evaluate(ctx: &Context, seed: u64, cmd: EvaluateCommand) -> Result<(), CliError> {
    let default_params = "a=1.3,b=1.7,c=1.2";
    match cmd {
        EvaluateCommand::Cmc {
            manifest,
            split,
            gallery,
            max_rank,
            out,
        } => {
            let ds = Dataset::open(&manifest)?;
            let split = load_split(&split)?;
            let gallery = load_gallery(&gallery)?;
            let config = ctx.config(default_params)?;
            let paths: Vec<&str> = split.probe.iter().map(|p| p.path.as_str()).collect();
            let embeddings = ctx.embed_all(&ds, &paths, &config)?;
            let rankings = embeddings
                .iter()
                .map(|e| Ok(gallery.identify(e, None).map_err(data)?.identities()))
                .collect::<Result<Vec<_>, CliError>>()?;
            let truth: Vec<String> = split.probe.iter().map(|p| p.identity.clone()).collect();
            let cmc = compute_cmc(&rankings, &truth, max_rank).map_err(data)?;
            let rows: Vec<_> = cmc
                .rates
                .iter()
                .enumerate()
                .map(|(k, y)| json!({"x": k + 1, "y": y}))
                .collect();
            write_jsonl(&out, &rows)?;
            println!("{}", json!({"probes": cmc.probes, "rank_1": cmc.rate_at(1)}));
        }
        EvaluateCommand::Roc {
            manifest,
            split,
            population,
            genuine,
            imposter,
            out,
        } => {
            let ds = Dataset::open(&manifest)?;
            let split = load_split(&split)?;
            let pool: Vec<LabeledImage> = match population {
                Population::Test => split.test.clone(),
                Population::All => split.train.iter().chain(&split.test).cloned().collect(),
            };
            let pairs = sample_pairs(&pool, genuine, imposter, seeds::derive(seed, Subsystem::Pairs))
                .map_err(data)?;
            let mut paths: Vec<&str> = pairs
                .genuine
                .iter()
                .chain(&pairs.imposter)
                .flat_map(|p| [p.a.path.as_str(), p.b.path.as_str()])
                .collect();
            paths.sort_unstable();
            paths.dedup();
            let config = ctx.config(default_params)?;
            let embedded = ctx.embed_all(&ds, &paths, &config)?;
            let cache: HashMap<&str, &Embedding> = paths.iter().copied().zip(&embedded).collect();
            let score = |set: &[crate::eval::Pair]| -> Result<Vec<f64>, CliError> {
                set.iter()
                    .map(|p| {
                        cosine_similarity(cache[p.a.path.as_str()], cache[p.b.path.as_str()])
                            .map_err(data)
                    })
                    .collect()
            };
            let roc = compute_roc(&score(&pairs.genuine)?, &score(&pairs.imposter)?).map_err(data)?;
            let rows: Vec<_> = roc
                .points
                .iter()
                .map(|p| json!({"x": p.fpr, "y": p.tpr, "threshold": threshold_json(p.threshold)}))
                .collect();
            write_jsonl(&out, &rows)?;
            println!(
                "{}",
                json!({"genuine": pairs.genuine.len(), "imposter": pairs.imposter.len(), "auc": roc.auc})
            );
        }
        EvaluateCommand::Ranks {
            manifest,
            split,
            folds,
            out,
        } => {
            let ds = Dataset::open(&manifest)?;
            let mut split = load_split(&split)?;
            split.spec.seed = seeds::derive(seed, Subsystem::Folds);
            let config = ctx.config(default_params)?;
            let paths: Vec<&str> = split
                .train
                .iter()
                .chain(&split.test)
                .map(|i| i.path.as_str())
                .collect();
            let embedded = ctx.embed_all(&ds, &paths, &config)?;
            let cache: HashMap<&str, &Embedding> = paths.iter().copied().zip(&embedded).collect();
            let table = rank_k_table(
                &split,
                |img| Ok(cache[img.path.as_str()].clone()),
                folds,
                &TABLE_RANKS,
            )
            .map_err(data)?;
            let mut rows: Vec<_> = table
                .folds
                .iter()
                .enumerate()
                .map(|(k, r)| json!({"kind": "fold", "fold": k + 1, "ranks": table.ranks, "rates": r}))
                .collect();
            rows.push(json!({"kind": "summary", "ranks": table.ranks, "mean": table.mean, "std": table.std}));
            write_jsonl(&out, &rows)?;
            println!("{table}");
        }
        EvaluateCommand::Landmarks {
            manifest,
            predictions,
            out,
        } => {
            let ds = Dataset::open(&manifest)?;
            let annotated: Vec<&ManifestRecord> =
                ds.manifest.records.iter().filter(|r| r.landmarks.is_some()).collect();
            let predicted: Vec<(String, FaceLandmarks)> = match predictions {
                Some(p) => {
                    let text = std::fs::read_to_string(&p)
                        .map_err(|e| data(format!("{}: {e}", p.display())))?;
                    text.lines()
                        .enumerate()
                        .filter(|(_, l)| !l.trim().is_empty())
                        .map(|(k, l)| {
                            let r: PredictionRecord = serde_json::from_str(l)
                                .map_err(|e| data(format!("{} line {}: {e}", p.display(), k + 1)))?;
                            Ok((r.path, r.landmarks))
                        })
                        .collect::<Result<_, CliError>>()?
                }
                None => annotated
                    .par_iter()
                    .map(|r| {
                        let img = ds.load(&r.path)?;
                        Ok((r.path.clone(), locate_face(&ctx.providers, &r.path, &img, false)?.landmarks))
                    })
                    .collect::<Result<_, CliError>>()?,
            };
            let mut truth = Vec::with_capacity(predicted.len());
            for (path, _) in &predicted {
                let rec = ds.record(path)?;
                truth.push(rec.landmarks.ok_or_else(|| data(format!("{path:?} has no annotated landmarks")))?);
            }
            let pred: Vec<FaceLandmarks> = predicted.into_iter().map(|(_, l)| l).collect();
            let report = localization_error(&pred, &truth).map_err(data)?;
            write_jsonl(&out, &[report])?;
            println!("{report}");
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let seed = cli.seed;
    let needs_providers = matches!(
        cli.command,
        Command::Align(_) | Command::Enroll(_) | Command::Identify(_) | Command::Evaluate(_)
    );
    let context = |manifest: &Path| -> Result<Context, CliError> {
        let m = DatasetManifest::load(manifest).map_err(data)?;
        let providers = ProviderRegistry::default()
            .build(&cli.provider, &m)
            .map_err(|e| CliError::Provider(e.to_string()))?;
        Ok(Context {
            trace: cli.trace,
            providers,
        })
    };
    let manifest_of = |c: &Command| -> Option<PathBuf> {
        match c {
            Command::Align(a) => Some(a.manifest.clone()),
            Command::Enroll(a) => Some(a.manifest.clone()),
            Command::Identify(a) => Some(a.manifest.clone()),
            Command::Evaluate(
                EvaluateCommand::Cmc { manifest, .. }
                | EvaluateCommand::Roc { manifest, .. }
                | EvaluateCommand::Ranks { manifest, .. }
                | EvaluateCommand::Landmarks { manifest, .. },
            ) => Some(manifest.clone()),
            _ => None,
        }
    };
    let ctx = match manifest_of(&cli.command) {
        Some(m) if needs_providers => Some(context(&m)?),
        _ => None,
    };
    let ctx = || ctx.as_ref().expect("providers built for this command");
    match cli.command {
        Command::Ingest(c) => cmd_ingest(c),
        Command::Dedup(a) => cmd_dedup(seed, a),
        Command::Split(a) => cmd_split(seed, a),
        Command::Align(a) => cmd_align(ctx(), a),
        Command::Enroll(a) => cmd_enroll(ctx(), a),
        Command::Identify(a) => cmd_identify(ctx(), a),
        Command::Evaluate(c) => cmd_evaluate(ctx(), seed, c),
    }
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match pool.install(|| dispatch(cli)) {
        Ok(()) => {
            let _ = std::io::stdout().flush();
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    run(std::env::args_os())
}
