//! Deterministic synthetic panda-face data for examples, tests and demos.
//!
//! Each record carries its own bounding box and landmarks; pixels are
//! rendered on demand from the record, so a manifest alone is enough to
//! reproduce every image.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;

use crate::imaging::io::{save_image, ImageIoError};
use crate::imaging::{BoundingBox, ImageBuffer, Point2};
use crate::landmarks::FaceLandmarks;
use crate::manifest::{DatasetManifest, ManifestRecord, Source};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub identities: usize,
    pub images_per_identity: usize,
    /// When set, overrides `images_per_identity` and spreads this many
    /// images as evenly as possible over the identities.
    pub total_images: Option<usize>,
    pub width: usize,
    pub height: usize,
    /// Largest in-plane tilt, radians.
    pub max_tilt: f64,
    pub eye_distance: (f64, f64),
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            identities: 5,
            images_per_identity: 8,
            total_images: None,
            width: 256,
            height: 256,
            max_tilt: 25.0 * PI / 180.0,
            eye_distance: (40.0, 60.0),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// 51 individuals, 2877 images.
    pub fn reference() -> Self {
        Self {
            identities: 51,
            total_images: Some(2877),
            ..Self::default()
        }
    }

    pub fn counts(&self) -> Vec<usize> {
        match self.total_images {
            Some(total) => {
                let base = total / self.identities;
                let extra = total % self.identities;
                (0..self.identities).map(|k| base + usize::from(k < extra)).collect()
            }
            None => vec![self.images_per_identity; self.identities],
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    pub manifest: DatasetManifest,
}

pub fn identity_label(k: usize) -> String {
    format!("panda-{:02}", k + 1)
}

/// Random face pose: eye distance, tilt and eye midpoint inside the frame.
pub fn random_landmarks<R: Rng>(rng: &mut R, spec: &SyntheticSpec) -> FaceLandmarks {
    let d = rng.gen_range(spec.eye_distance.0..=spec.eye_distance.1);
    let theta = rng.gen_range(-spec.max_tilt..=spec.max_tilt);
    let margin = 1.8 * d;
    let mx = rng.gen_range(margin..spec.width as f64 - margin);
    let my = rng.gen_range(margin..spec.height as f64 - margin);
    let (s, c) = theta.sin_cos();
    FaceLandmarks {
        left_eye: Point2::new(mx - 0.5 * d * c, my - 0.5 * d * s),
        right_eye: Point2::new(mx + 0.5 * d * c, my + 0.5 * d * s),
        // below the eye line, perpendicular to it
        nose: Point2::new(mx - 0.8 * d * s, my + 0.8 * d * c),
    }
}

/// Square box around the face, 2.6 eye distances wide.
pub fn face_box(lm: &FaceLandmarks) -> BoundingBox {
    let d = lm.inter_eye_distance();
    let m = lm.left_eye.midpoint(&lm.right_eye);
    let c = m.midpoint(&lm.nose);
    BoundingBox {
        x: c.x - 1.3 * d,
        y: c.y - 1.3 * d,
        w: 2.6 * d,
        h: 2.6 * d,
    }
}

impl SyntheticDataset {
    pub fn generate(spec: &SyntheticSpec) -> Self {
        let mut records = Vec::new();
        for (id, n) in spec.counts().into_iter().enumerate() {
            let identity = identity_label(id);
            let mut rng = seeds::rng(seeds::labeled(spec.seed, &identity));
            let mut burst = random_landmarks(&mut rng, spec);
            for k in 0..n {
                // mostly video frames, every fifth image a still photo; video
                // frames come in bursts of four with a slowly drifting pose
                let source = if k % 5 == 4 { Source::Photo } else { Source::VideoFrame };
                let lm = if source == Source::Photo || k % 5 == 0 {
                    let fresh = random_landmarks(&mut rng, spec);
                    if source == Source::VideoFrame {
                        burst = fresh;
                    }
                    fresh
                } else {
                    let (dx, dy) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    burst.map(|p| Point2::new(p.x + dx, p.y + dy))
                };
                let mut r = ManifestRecord::new(
                    format!("{identity}/{k:03}.png"),
                    identity.clone(),
                    source,
                );
                if source == Source::VideoFrame {
                    r.video_id = Some(format!("{identity}-clip"));
                    r.frame_index = Some(k as u64);
                }
                r.bbox = Some(face_box(&lm));
                r.landmarks = Some(lm);
                records.push(r);
            }
        }
        Self {
            spec: *spec,
            manifest: DatasetManifest::new(records),
        }
    }

    /// Pixels of `record`; identical across calls.
    pub fn render(&self, record: &ManifestRecord) -> ImageBuffer {
        let lm = record
            .landmarks
            .expect("synthetic records always carry landmarks");
        let texture = seeds::labeled(self.spec.seed, &record.path);
        render_face(self.spec.width, self.spec.height, &lm, identity_tone(&record.identity), texture)
    }

    /// Write every image as PNG under `dir` plus `dir/manifest.jsonl`.
    pub fn write_to(&self, dir: &Path) -> Result<(), ImageIoError> {
        for r in &self.manifest.records {
            let path = dir.join(&r.path);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| write_err(parent, e))?;
            }
            save_image(&self.render(r), &path)?;
        }
        let manifest = dir.join("manifest.jsonl");
        std::fs::write(&manifest, self.manifest.to_jsonl()).map_err(|e| write_err(&manifest, e))
    }
}

fn write_err(path: &Path, e: std::io::Error) -> ImageIoError {
    ImageIoError::Write {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn identity_tone(identity: &str) -> [u8; 3] {
    let h = seeds::fnv1a(identity.as_bytes());
    [
        200 + (h & 0x1f) as u8,
        200 + ((h >> 8) & 0x1f) as u8,
        200 + ((h >> 16) & 0x1f) as u8,
    ]
}

/// White head, dark eye patches and nose on a textured background.
pub fn render_face(
    width: usize,
    height: usize,
    lm: &FaceLandmarks,
    tone: [u8; 3],
    texture_seed: u64,
) -> ImageBuffer {
    let d = lm.inter_eye_distance();
    let head = lm.left_eye.midpoint(&lm.right_eye).midpoint(&lm.nose);
    let mut rng = seeds::rng(texture_seed);
    let phase: f64 = rng.gen_range(0.0..2.0 * PI);
    let mut px = Vec::with_capacity(width * height * 3);
    for i in 0..height {
        for j in 0..width {
            let p = Point2::new(j as f64 + 0.5, i as f64 + 0.5);
            let grain: i32 = rng.gen_range(-6..=6);
            let value: [i32; 3] = if p.distance(&lm.left_eye) <= 0.3 * d
                || p.distance(&lm.right_eye) <= 0.3 * d
            {
                [25, 25, 30]
            } else if p.distance(&lm.nose) <= 0.18 * d {
                [15, 15, 15]
            } else if p.distance(&head) <= 1.25 * d {
                tone.map(i32::from)
            } else {
                let g = 90.0 + 40.0 * ((p.x + p.y) / 37.0 + phase).sin();
                [g as i32, (g * 1.1) as i32, (g * 0.7) as i32]
            };
            px.extend(value.map(|v| (v + grain).clamp(0, 255) as u8));
        }
    }
    ImageBuffer::new(width, height, 3, px).expect("buffer matches dimensions")
}

/// Gray value noise, smoothed with a 3x3 box filter.
pub fn texture_image(width: usize, height: usize, seed: u64) -> ImageBuffer {
    let mut rng = seeds::rng(seed);
    let raw: Vec<f64> = (0..width * height).map(|_| rng.gen_range(0.0..255.0)).collect();
    ImageBuffer::from_fn_gray(width, height, |i, j| {
        let mut sum = 0.0;
        let mut n = 0.0;
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                let (y, x) = (i as i64 + di, j as i64 + dj);
                if y >= 0 && x >= 0 && (y as usize) < height && (x as usize) < width {
                    sum += raw[y as usize * width + x as usize];
                    n += 1.0;
                }
            }
        }
        (sum / n).round() as u8
    })
}

/// Copy of `img` with independent uniform noise in `[-amplitude, amplitude]`.
pub fn jitter(img: &ImageBuffer, amplitude: u8, seed: u64) -> ImageBuffer {
    let mut rng = seeds::rng(seed);
    let a = i32::from(amplitude);
    let px = img
        .pixels()
        .iter()
        .map(|&v| (i32::from(v) + rng.gen_range(-a..=a)).clamp(0, 255) as u8)
        .collect();
    ImageBuffer::new(img.width(), img.height(), img.channels(), px).expect("same shape")
}
