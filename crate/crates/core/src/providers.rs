//! Model seams: face detector, eye/nose segmenter and feature embedder.
//!
//! Real models plug in through the [`Detector`], [`Segmenter`] and
//! [`Embedder`] traits. Calls go through the `*_face` seam functions, which
//! validate provider output before the rest of the pipeline sees it. The
//! mock implementations here answer from dataset annotations and are fully
//! deterministic.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::map_point_to_crop;
use crate::gallery::Embedding;
use crate::imaging::{BoundingBox, ImageBuffer};
use crate::landmarks::{render_masks, MaskParams, MaskTriple};
use crate::manifest::DatasetManifest;
use crate::seeds::{fnv1a, splitmix64};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ProviderError {
    #[error("no face detected")]
    NoFace,
    #[error("{provider}: no annotation for {key:?}")]
    MissingAnnotation { provider: String, key: String },
    #[error("{provider} returned invalid output: {message}")]
    InvalidOutput { provider: String, message: String },
    #[error("{provider} failed: {message}")]
    Failure { provider: String, message: String },
    #[error("provider unavailable: {0}")]
    Unavailable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderMetadata {
    pub name: String,
    /// Square input side the model expects.
    pub input_side: usize,
    pub embedding_dim: Option<usize>,
    /// Safe to call from several threads at once.
    pub concurrent: bool,
}

/// Identifies the image being processed; mocks use `key` to find annotations.
#[derive(Debug, Clone, Copy)]
pub struct ImageContext<'a> {
    pub key: &'a str,
}

/// Geometry of the face crop handed to the segmenter: `crop_box` is the
/// source region (integer grid) and `scale` the resize factors applied to it.
#[derive(Debug, Clone, Copy)]
pub struct FaceContext<'a> {
    pub key: &'a str,
    pub crop_box: BoundingBox,
    pub scale: (f64, f64),
}

pub trait Detector: Send + Sync {
    fn metadata(&self) -> ProviderMetadata;
    fn detect(&self, ctx: &ImageContext, img: &ImageBuffer)
        -> Result<Vec<Detection>, ProviderError>;
}

pub trait Segmenter: Send + Sync {
    fn metadata(&self) -> ProviderMetadata;
    /// Three single-channel masks (left eye, right eye, nose) at crop size.
    /// Soft outputs are allowed; the seam binarizes them.
    fn segment(
        &self,
        ctx: &FaceContext,
        crop: &ImageBuffer,
    ) -> Result<[ImageBuffer; 3], ProviderError>;
}

pub trait Embedder: Send + Sync {
    fn metadata(&self) -> ProviderMetadata;
    fn embed(&self, ctx: &ImageContext, aligned: &ImageBuffer) -> Result<Vec<f32>, ProviderError>;
}

fn invalid(provider: &str, message: impl Into<String>) -> ProviderError {
    ProviderError::InvalidOutput {
        provider: provider.to_string(),
        message: message.into(),
    }
}

/// Run the detector, clip boxes to the image and drop boxes that fall
/// entirely outside it.
pub fn detect_faces(
    detector: &dyn Detector,
    ctx: &ImageContext,
    img: &ImageBuffer,
) -> Result<Vec<Detection>, ProviderError> {
    let name = detector.metadata().name;
    let raw = detector.detect(ctx, img)?;
    let mut out = Vec::with_capacity(raw.len());
    for d in raw {
        if !d.confidence.is_finite() {
            return Err(invalid(&name, "non-finite confidence"));
        }
        d.bbox.validate().map_err(|e| invalid(&name, e.to_string()))?;
        if let Some(bbox) = d.bbox.clamp_to(img.width(), img.height()) {
            out.push(Detection {
                bbox,
                confidence: d.confidence.clamp(0.0, 1.0),
            });
        }
    }
    Ok(out)
}

/// Largest box by `w·h`; ties go to higher confidence, then earlier input.
pub fn select_primary_face(detections: &[Detection]) -> Result<Detection, ProviderError> {
    let mut best: Option<&Detection> = None;
    for d in detections {
        let better = match best {
            None => true,
            Some(b) => {
                let (a1, a0) = (d.bbox.area(), b.bbox.area());
                a1 > a0 || (a1 == a0 && d.confidence > b.confidence)
            }
        };
        if better {
            best = Some(d);
        }
    }
    best.copied().ok_or(ProviderError::NoFace)
}

pub fn segment_face(
    segmenter: &dyn Segmenter,
    ctx: &FaceContext,
    crop: &ImageBuffer,
) -> Result<MaskTriple, ProviderError> {
    let name = segmenter.metadata().name;
    let [l, r, n] = segmenter.segment(ctx, crop)?;
    for m in [&l, &r, &n] {
        if (m.width(), m.height()) != (crop.width(), crop.height()) {
            return Err(invalid(
                &name,
                format!(
                    "mask is {}x{}, crop is {}x{}",
                    m.width(),
                    m.height(),
                    crop.width(),
                    crop.height()
                ),
            ));
        }
    }
    MaskTriple::from_soft(&l, &r, &n).map_err(|e| invalid(&name, e.to_string()))
}

pub fn embed_face(
    embedder: &dyn Embedder,
    ctx: &ImageContext,
    aligned: &ImageBuffer,
) -> Result<Embedding, ProviderError> {
    let meta = embedder.metadata();
    let raw = embedder.embed(ctx, aligned)?;
    if let Some(dim) = meta.embedding_dim {
        if raw.len() != dim {
            return Err(invalid(
                &meta.name,
                format!("embedding has {} values, metadata says {dim}", raw.len()),
            ));
        }
    }
    Embedding::new(raw).map_err(|e| invalid(&meta.name, e.to_string()))
}

/// Detector answering with boxes registered per image key.
#[derive(Debug, Clone, Default)]
pub struct MockDetector {
    boxes: HashMap<String, Vec<Detection>>,
}

impl MockDetector {
    pub fn from_manifest(manifest: &DatasetManifest) -> Self {
        let mut d = Self::default();
        for r in &manifest.records {
            if let Some(b) = r.bbox {
                d.add(&r.path, Detection {
                    bbox: b,
                    confidence: 1.0,
                });
            }
        }
        d
    }

    pub fn add(&mut self, key: &str, detection: Detection) {
        self.boxes.entry(key.to_string()).or_default().push(detection);
    }
}

impl Detector for MockDetector {
    fn metadata(&self) -> ProviderMetadata {
        ProviderMetadata {
            name: "mock-detector".into(),
            input_side: 416,
            embedding_dim: None,
            concurrent: true,
        }
    }

    fn detect(
        &self,
        ctx: &ImageContext,
        _img: &ImageBuffer,
    ) -> Result<Vec<Detection>, ProviderError> {
        Ok(self.boxes.get(ctx.key).cloned().unwrap_or_default())
    }
}

/// Segmenter that renders ground-truth disks from annotated landmarks.
#[derive(Debug, Clone)]
pub struct MockSegmenter {
    landmarks: HashMap<String, crate::landmarks::FaceLandmarks>,
    input_side: usize,
    mask: MaskParams,
}

impl MockSegmenter {
    pub fn from_manifest(manifest: &DatasetManifest, input_side: usize) -> Self {
        let landmarks = manifest
            .records
            .iter()
            .filter_map(|r| r.landmarks.map(|lm| (r.path.clone(), lm)))
            .collect();
        Self {
            landmarks,
            input_side,
            mask: MaskParams::with_canvas(input_side),
        }
    }
}

impl Segmenter for MockSegmenter {
    fn metadata(&self) -> ProviderMetadata {
        ProviderMetadata {
            name: "mock-segmenter".into(),
            input_side: self.input_side,
            embedding_dim: None,
            concurrent: true,
        }
    }

    fn segment(
        &self,
        ctx: &FaceContext,
        crop: &ImageBuffer,
    ) -> Result<[ImageBuffer; 3], ProviderError> {
        let lm = self
            .landmarks
            .get(ctx.key)
            .ok_or_else(|| ProviderError::MissingAnnotation {
                provider: "mock-segmenter".into(),
                key: ctx.key.to_string(),
            })?;
        let in_crop = lm.map(|p| map_point_to_crop(p, &ctx.crop_box, ctx.scale));
        let params = MaskParams {
            canvas_width: crop.width(),
            canvas_height: crop.height(),
            ..self.mask
        };
        let masks = render_masks(&in_crop, &params).map_err(|e| ProviderError::Failure {
            provider: "mock-segmenter".into(),
            message: e.to_string(),
        })?;
        Ok([
            masks.left_eye().clone(),
            masks.right_eye().clone(),
            masks.nose().clone(),
        ])
    }
}

/// Embedder producing one orthogonal basis direction per identity plus a
/// small per-image perturbation keyed by the image path.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    identity_of: HashMap<String, String>,
    slot: HashMap<String, usize>,
    dim: usize,
    noise: f32,
    input_side: usize,
}

impl MockEmbedder {
    pub const DEFAULT_NOISE: f32 = 0.05;

    pub fn from_manifest(manifest: &DatasetManifest, input_side: usize) -> Self {
        Self::with_noise(manifest, input_side, Self::DEFAULT_NOISE)
    }

    pub fn with_noise(manifest: &DatasetManifest, input_side: usize, noise: f32) -> Self {
        let labels: BTreeSet<&str> = manifest.records.iter().map(|r| r.identity.as_str()).collect();
        let slot: HashMap<String, usize> = labels
            .iter()
            .enumerate()
            .map(|(k, l)| (l.to_string(), k))
            .collect();
        Self {
            identity_of: manifest
                .records
                .iter()
                .map(|r| (r.path.clone(), r.identity.clone()))
                .collect(),
            dim: slot.len().max(8),
            slot,
            noise,
            input_side,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl Embedder for MockEmbedder {
    fn metadata(&self) -> ProviderMetadata {
        ProviderMetadata {
            name: "mock-embedder".into(),
            input_side: self.input_side,
            embedding_dim: Some(self.dim),
            concurrent: true,
        }
    }

    fn embed(&self, ctx: &ImageContext, _aligned: &ImageBuffer) -> Result<Vec<f32>, ProviderError> {
        let identity = self
            .identity_of
            .get(ctx.key)
            .ok_or_else(|| ProviderError::MissingAnnotation {
                provider: "mock-embedder".into(),
                key: ctx.key.to_string(),
            })?;
        let slot = self.slot[identity];
        let mut state = fnv1a(ctx.key.as_bytes());
        let v = (0..self.dim)
            .map(|k| {
                state = splitmix64(state);
                // uniform in [-1, 1) from the top 24 bits
                let u = (state >> 40) as f32 / (1u64 << 23) as f32 - 1.0;
                let base = if k == slot { 1.0 } else { 0.0 };
                base + self.noise * u
            })
            .collect();
        Ok(v)
    }
}

/// Provider set used by the pipeline. Providers whose metadata says they are
/// not concurrent are called under a lock.
#[derive(Clone)]
pub struct Providers {
    detector: Arc<dyn Detector>,
    segmenter: Arc<dyn Segmenter>,
    embedder: Arc<dyn Embedder>,
    locks: Arc<[Option<Mutex<()>>; 3]>,
}

impl std::fmt::Debug for Providers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Providers")
            .field("detector", &self.detector.metadata().name)
            .field("segmenter", &self.segmenter.metadata().name)
            .field("embedder", &self.embedder.metadata().name)
            .finish()
    }
}

impl Providers {
    pub fn new(
        detector: Arc<dyn Detector>,
        segmenter: Arc<dyn Segmenter>,
        embedder: Arc<dyn Embedder>,
    ) -> Self {
        let lock = |concurrent: bool| (!concurrent).then(|| Mutex::new(()));
        let locks = [
            lock(detector.metadata().concurrent),
            lock(segmenter.metadata().concurrent),
            lock(embedder.metadata().concurrent),
        ];
        Self {
            detector,
            segmenter,
            embedder,
            locks: Arc::new(locks),
        }
    }

    /// All-mock providers answering from `manifest` annotations, with a
    /// 224-pixel segmenter and embedder input.
    pub fn mock(manifest: &DatasetManifest) -> Self {
        Self::new(
            Arc::new(MockDetector::from_manifest(manifest)),
            Arc::new(MockSegmenter::from_manifest(manifest, 224)),
            Arc::new(MockEmbedder::from_manifest(manifest, 224)),
        )
    }

    fn guard(&self, k: usize) -> Option<std::sync::MutexGuard<'_, ()>> {
        self.locks[k]
            .as_ref()
            .map(|m| m.lock().unwrap_or_else(|e| e.into_inner()))
    }

    pub fn detector_metadata(&self) -> ProviderMetadata {
        self.detector.metadata()
    }

    pub fn segmenter_metadata(&self) -> ProviderMetadata {
        self.segmenter.metadata()
    }

    pub fn embedder_metadata(&self) -> ProviderMetadata {
        self.embedder.metadata()
    }

    pub fn detect(&self, ctx: &ImageContext, img: &ImageBuffer) -> Result<Vec<Detection>, ProviderError> {
        let _g = self.guard(0);
        detect_faces(self.detector.as_ref(), ctx, img)
    }

    pub fn segment(&self, ctx: &FaceContext, crop: &ImageBuffer) -> Result<MaskTriple, ProviderError> {
        let _g = self.guard(1);
        segment_face(self.segmenter.as_ref(), ctx, crop)
    }

    pub fn embed(&self, ctx: &ImageContext, aligned: &ImageBuffer) -> Result<Embedding, ProviderError> {
        let _g = self.guard(2);
        embed_face(self.embedder.as_ref(), ctx, aligned)
    }
}

/// Parsed `--provider` flag: `mock` or `external:<spec>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderSelection {
    Mock,
    External(String),
}

impl std::str::FromStr for ProviderSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock" => Ok(Self::Mock),
            _ => match s.strip_prefix("external:") {
                Some(spec) if !spec.is_empty() => Ok(Self::External(spec.to_string())),
                _ => Err(format!("expected `mock` or `external:<spec>`, got {s:?}")),
            },
        }
    }
}

pub type ProviderFactory = Box<dyn Fn(&str) -> Result<Providers, ProviderError> + Send + Sync>;

/// External inference runtimes register here under the name before the
/// first `:` of their spec string.
#[derive(Default)]
pub struct ProviderRegistry {
    factories: HashMap<String, ProviderFactory>,
}

impl ProviderRegistry {
    pub fn register(&mut self, name: &str, factory: ProviderFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn build(
        &self,
        selection: &ProviderSelection,
        manifest: &DatasetManifest,
    ) -> Result<Providers, ProviderError> {
        match selection {
            ProviderSelection::Mock => Ok(Providers::mock(manifest)),
            ProviderSelection::External(spec) => {
                let name = spec.split(':').next().unwrap_or(spec);
                let factory = self.factories.get(name).ok_or_else(|| {
                    ProviderError::Unavailable(format!(
                        "no external runtime registered for {name:?}"
                    ))
                })?;
                factory(spec)
            }
        }
    }
}
