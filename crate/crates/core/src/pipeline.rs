//! End-to-end identification of one image: detect, crop, segment, extract
//! landmarks, align, embed and match against a gallery.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::align::{align_face, map_landmarks_to_source, AlignError, AlignParams, AlignedFace};
use crate::gallery::{Embedding, Gallery, GalleryError, MatchResult};
use crate::imaging::{crop, resize, BoundingBox, ImageBuffer, ImagingError};
use crate::landmarks::{extract_landmarks, FaceLandmarks, LandmarkError};
use crate::providers::{
    select_primary_face, Detection, FaceContext, ImageContext, ProviderError, Providers,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Detect,
    Select,
    Crop,
    Segment,
    Landmarks,
    Align,
    Embed,
    Identify,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Detect => "detect",
            Stage::Select => "select",
            Stage::Crop => "crop",
            Stage::Segment => "segment",
            Stage::Landmarks => "landmarks",
            Stage::Align => "align",
            Stage::Embed => "embed",
            Stage::Identify => "identify",
        };
        f.write_str(s)
    }
}

#[derive(Error, Debug, Clone, PartialEq)]
pub enum PipelineError {
    #[error("{key}: no face detected")]
    NoFace { key: String },
    #[error("{key}: {stage} stage: {source}")]
    Provider {
        key: String,
        stage: Stage,
        source: ProviderError,
    },
    #[error("{key}: landmark extraction: {source}")]
    Landmarks { key: String, source: LandmarkError },
    #[error("{key}: alignment: {source}")]
    Align { key: String, source: AlignError },
    #[error("{key}: crop: {source}")]
    Crop { key: String, source: ImagingError },
    #[error("{key}: identify: {source}")]
    Gallery { key: String, source: GalleryError },
}

impl PipelineError {
    pub fn stage(&self) -> Stage {
        match self {
            PipelineError::NoFace { .. } => Stage::Detect,
            PipelineError::Provider { stage, .. } => *stage,
            PipelineError::Landmarks { .. } => Stage::Landmarks,
            PipelineError::Align { .. } => Stage::Align,
            PipelineError::Crop { .. } => Stage::Crop,
            PipelineError::Gallery { .. } => Stage::Identify,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PipelineConfig {
    pub align: AlignParams,
    /// Open-set rejection threshold; `None` always returns the top identity.
    pub threshold: Option<f64>,
    pub trace: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEvent {
    pub stage: Stage,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedFace {
    pub detection: Detection,
    /// Integer source region handed to the segmenter.
    pub crop_box: BoundingBox,
    pub crop_scale: (f64, f64),
    pub crop_landmarks: FaceLandmarks,
    pub landmarks: FaceLandmarks,
    /// Eye channels arrived in the wrong order and were swapped.
    pub swapped: bool,
    pub aligned: AlignedFace,
    pub embedding: Embedding,
    pub trace: Vec<TraceEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub face: ProcessedFace,
    pub result: MatchResult,
}

struct Tracer {
    on: bool,
    events: Vec<TraceEvent>,
}

impl Tracer {
    fn note(&mut self, stage: Stage, detail: impl FnOnce() -> String) {
        if self.on {
            self.events.push(TraceEvent {
                stage,
                detail: detail(),
            });
        }
    }
}

/// Detection through landmark extraction, in source-image coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LocatedFace {
    pub detection: Detection,
    /// Integer source region handed to the segmenter.
    pub crop_box: BoundingBox,
    pub crop_scale: (f64, f64),
    pub crop_landmarks: FaceLandmarks,
    pub landmarks: FaceLandmarks,
    /// Eye channels arrived in the wrong order and were swapped.
    pub swapped: bool,
    pub trace: Vec<TraceEvent>,
}

fn provider_err(key: &str, stage: Stage) -> impl Fn(ProviderError) -> PipelineError + '_ {
    move |source| match source {
        ProviderError::NoFace => PipelineError::NoFace { key: key.to_string() },
        source => PipelineError::Provider {
            key: key.to_string(),
            stage,
            source,
        },
    }
}

pub fn locate_face(
    providers: &Providers,
    key: &str,
    img: &ImageBuffer,
    trace: bool,
) -> Result<LocatedFace, PipelineError> {
    let mut t = Tracer {
        on: trace,
        events: Vec::new(),
    };
    let ctx = ImageContext { key };

    let detections = providers.detect(&ctx, img).map_err(provider_err(key, Stage::Detect))?;
    t.note(Stage::Detect, || format!("{} detection(s)", detections.len()));
    let detection = select_primary_face(&detections).map_err(provider_err(key, Stage::Detect))?;
    t.note(Stage::Select, || format!("{:?}", detection.bbox));

    let grid = detection.bbox.pixel_grid();
    let crop_box = BoundingBox {
        x: grid.x as f64,
        y: grid.y as f64,
        w: grid.w.max(1) as f64,
        h: grid.h.max(1) as f64,
    };
    let face = crop(img, &crop_box).map_err(|source| PipelineError::Crop {
        key: key.to_string(),
        source,
    })?;
    let side = providers.segmenter_metadata().input_side;
    let crop_scale = (side as f64 / crop_box.w, side as f64 / crop_box.h);
    let face = resize(&face, side, side);
    t.note(Stage::Crop, || format!("{crop_box:?} -> {side}x{side}"));

    let fctx = FaceContext {
        key,
        crop_box,
        scale: crop_scale,
    };
    let masks = providers
        .segment(&fctx, &face)
        .map_err(provider_err(key, Stage::Segment))?;
    t.note(Stage::Segment, || "3 masks".into());

    let extracted = extract_landmarks(&masks).map_err(|source| PipelineError::Landmarks {
        key: key.to_string(),
        source,
    })?;
    let landmarks = map_landmarks_to_source(&extracted.landmarks, &crop_box, crop_scale)
        .map_err(|source| PipelineError::Align {
            key: key.to_string(),
            source,
        })?;
    t.note(Stage::Landmarks, || {
        format!("{:?} swapped={}", landmarks.points(), extracted.swapped)
    });
    Ok(LocatedFace {
        detection,
        crop_box,
        crop_scale,
        crop_landmarks: extracted.landmarks,
        landmarks,
        swapped: extracted.swapped,
        trace: t.events,
    })
}

/// Everything up to and including the embedding.
pub fn process_face(
    providers: &Providers,
    key: &str,
    img: &ImageBuffer,
    config: &PipelineConfig,
) -> Result<ProcessedFace, PipelineError> {
    let located = locate_face(providers, key, img, config.trace)?;
    let mut t = Tracer {
        on: config.trace,
        events: located.trace,
    };
    let aligned = align_face(img, &located.landmarks, &config.align).map_err(|source| {
        PipelineError::Align {
            key: key.to_string(),
            source,
        }
    })?;
    t.note(Stage::Align, || {
        format!("angle={:.4} rad, grid={:?}", aligned.rotation_angle, aligned.crop_grid)
    });

    let embed_side = providers.embedder_metadata().input_side;
    let embed_input = if embed_side == aligned.image.width() && embed_side == aligned.image.height() {
        aligned.image.clone()
    } else {
        resize(&aligned.image, embed_side, embed_side)
    };
    let embedding = providers
        .embed(&ImageContext { key }, &embed_input)
        .map_err(provider_err(key, Stage::Embed))?;
    t.note(Stage::Embed, || format!("dim {}", embedding.dim()));

    Ok(ProcessedFace {
        detection: located.detection,
        crop_box: located.crop_box,
        crop_scale: located.crop_scale,
        crop_landmarks: located.crop_landmarks,
        landmarks: located.landmarks,
        swapped: located.swapped,
        aligned,
        embedding,
        trace: t.events,
    })
}

/// Process one image and match it against `gallery`.
pub fn run_pipeline(
    providers: &Providers,
    gallery: &Gallery,
    key: &str,
    img: &ImageBuffer,
    config: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    let mut face = process_face(providers, key, img, config)?;
    let result = gallery
        .identify(&face.embedding, config.threshold)
        .map_err(|source| PipelineError::Gallery {
            key: key.to_string(),
            source,
        })?;
    if config.trace {
        face.trace.push(TraceEvent {
            stage: Stage::Identify,
            detail: format!("top {} ({:.4})", result.top().identity, result.top().score),
        });
    }
    Ok(PipelineOutput { face, result })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{SyntheticDataset, SyntheticSpec};

    fn small() -> SyntheticDataset {
        SyntheticDataset::generate(&SyntheticSpec {
            identities: 3,
            images_per_identity: 2,
            ..SyntheticSpec::default()
        })
    }

    #[test]
    fn recovers_annotated_landmarks() {
        let data = small();
        let providers = Providers::mock(&data.manifest);
        let rec = &data.manifest.records[0];
        let img = data.render(rec);
        let face = process_face(&providers, &rec.path, &img, &PipelineConfig::default()).unwrap();
        let truth = rec.landmarks.unwrap();
        for (a, b) in face.landmarks.points().iter().zip(truth.points()) {
            assert!(a.distance(&b) < 1.5, "{a:?} vs {b:?}");
        }
        assert!(!face.swapped);
    }

    #[test]
    fn trace_lists_stages_in_order() {
        let data = small();
        let providers = Providers::mock(&data.manifest);
        let mut gallery = Gallery::new();
        let cfg = PipelineConfig {
            trace: true,
            ..PipelineConfig::default()
        };
        for rec in &data.manifest.records[1..] {
            let f = process_face(&providers, &rec.path, &data.render(rec), &cfg).unwrap();
            gallery.enroll(&rec.identity, f.embedding, &rec.path).unwrap();
        }
        let rec = &data.manifest.records[0];
        let out = run_pipeline(&providers, &gallery, &rec.path, &data.render(rec), &cfg).unwrap();
        let stages: Vec<Stage> = out.face.trace.iter().map(|e| e.stage).collect();
        assert_eq!(
            stages,
            vec![
                Stage::Detect,
                Stage::Select,
                Stage::Crop,
                Stage::Segment,
                Stage::Landmarks,
                Stage::Align,
                Stage::Embed,
                Stage::Identify
            ]
        );
        assert_eq!(out.result.top().identity, rec.identity);
    }

    #[test]
    fn unknown_key_fails_with_no_face() {
        let data = small();
        let providers = Providers::mock(&data.manifest);
        let img = ImageBuffer::zeros(64, 64, 3);
        let err = process_face(&providers, "nobody.png", &img, &PipelineConfig::default()).unwrap_err();
        assert_eq!(err.stage(), Stage::Detect);
        assert!(matches!(err, PipelineError::NoFace { .. }));
    }
}
