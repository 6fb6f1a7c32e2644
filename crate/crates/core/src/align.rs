//! Eye-line face alignment.
//!
//! The face is rotated about the eye midpoint until the eye centers share a
//! row, then cropped with margins proportional to the inter-eye distance `d`:
//! `a·d` above the eyes, `b·d` below, and `c·d` beyond each eye center. The
//! crop is finally resized to a square of `output_side` pixels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{
    resize, rotate_then_crop, BoundingBox, ImageBuffer, ImagingError, PixelRect, Point2, Rotation,
};
use crate::landmarks::FaceLandmarks;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum AlignError {
    #[error("degenerate landmarks: inter-eye distance {0:.3} px is not above 1 px")]
    DegenerateLandmarks(f64),
    #[error("invalid alignment parameters: {0}")]
    Params(String),
    #[error("invalid crop scale ({0}, {1}); both factors must be positive")]
    Scale(f64, f64),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignParams {
    /// Margin above the eye line, in units of `d`.
    pub a: f64,
    /// Margin below the eye line.
    pub b: f64,
    /// Margin left of the left eye and right of the right eye.
    pub c: f64,
    pub output_side: usize,
}

impl Default for AlignParams {
    fn default() -> Self {
        Self {
            a: 1.3,
            b: 1.7,
            c: 1.2,
            output_side: 224,
        }
    }
}

impl AlignParams {
    pub fn validate(&self) -> Result<(), AlignError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(self.a) && ok(self.b) && ok(self.c)) {
            return Err(AlignError::Params(format!(
                "a, b, c must be positive (got a={}, b={}, c={})",
                self.a, self.b, self.c
            )));
        }
        if self.output_side < 16 {
            return Err(AlignError::Params(format!(
                "output_side must be >= 16, got {}",
                self.output_side
            )));
        }
        Ok(())
    }

    /// Parse `a=1.3,b=1.7,c=1.2[,side=224]`; omitted keys keep their defaults.
    pub fn parse(spec: &str) -> Result<Self, AlignError> {
        let mut p = Self::default();
        for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| AlignError::Params(format!("expected key=value, got {part:?}")))?;
            let bad = |_| AlignError::Params(format!("bad value for {k}: {v:?}"));
            match k.trim() {
                "a" => p.a = v.trim().parse().map_err(bad)?,
                "b" => p.b = v.trim().parse().map_err(bad)?,
                "c" => p.c = v.trim().parse().map_err(bad)?,
                "side" | "output_side" => {
                    p.output_side = v
                        .trim()
                        .parse()
                        .map_err(|_| AlignError::Params(format!("bad value for {k}: {v:?}")))?
                }
                other => return Err(AlignError::Params(format!("unknown key {other:?}"))),
            }
        }
        p.validate()?;
        Ok(p)
    }

    /// Inter-eye distance in the aligned output, independent of the input scale.
    pub fn normalized_eye_distance(&self) -> f64 {
        self.output_side as f64 / (1.0 + 2.0 * self.c)
    }
}

/// Row-major 2x3 affine map `p' = M [x, y, 1]^T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine2(pub [[f64; 3]; 2]);

impl Affine2 {
    pub fn identity() -> Self {
        Affine2([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        let m = &self.0;
        Point2::new(
            m[0][0] * p.x + m[0][1] * p.y + m[0][2],
            m[1][0] * p.x + m[1][1] * p.y + m[1][2],
        )
    }

    /// `self` after `first`.
    pub fn compose(&self, first: &Affine2) -> Affine2 {
        let a = &self.0;
        let b = &first.0;
        let mut out = [[0.0; 3]; 2];
        for (r, row) in out.iter_mut().enumerate() {
            row[0] = a[r][0] * b[0][0] + a[r][1] * b[1][0];
            row[1] = a[r][0] * b[0][1] + a[r][1] * b[1][1];
            row[2] = a[r][0] * b[0][2] + a[r][1] * b[1][2] + a[r][2];
        }
        Affine2(out)
    }

    pub fn coefficients(&self) -> [f64; 6] {
        let m = &self.0;
        [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2]]
    }
}

impl From<&Rotation> for Affine2 {
    fn from(r: &Rotation) -> Self {
        let (c, s) = (r.cos, r.sin);
        let (cx, cy) = (r.center.x, r.center.y);
        Affine2([
            [c, s, cx - c * cx - s * cy],
            [-s, c, cy + s * cx - c * cy],
        ])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedFace {
    pub image: ImageBuffer,
    /// Source-image coordinates to aligned-image coordinates.
    pub transform: Affine2,
    /// Crop in the rotated frame before rounding.
    pub crop_box: BoundingBox,
    /// Pixel grid actually cut out (pre-resize dimensions).
    pub crop_grid: PixelRect,
    /// Counter-clockwise (as displayed) rotation applied about `rotation_center`.
    pub rotation_angle: f64,
    pub rotation_center: Point2,
    pub source_landmarks: FaceLandmarks,
}

impl AlignedFace {
    pub fn aligned_landmarks(&self) -> FaceLandmarks {
        self.source_landmarks.map(|p| self.transform.apply(p))
    }
}

/// Crop geometry of an alignment without touching pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignGeometry {
    pub rotation: Rotation,
    pub angle: f64,
    pub crop_box: BoundingBox,
    pub eye_distance: f64,
}

pub fn alignment_geometry(
    lm: &FaceLandmarks,
    params: &AlignParams,
) -> Result<AlignGeometry, AlignError> {
    params.validate()?;
    let (l, r) = (lm.left_eye, lm.right_eye);
    let d = l.distance(&r);
    if !(d.is_finite() && d > 1.0) {
        return Err(AlignError::DegenerateLandmarks(d));
    }
    let angle = (r.y - l.y).atan2(r.x - l.x);
    let center = l.midpoint(&r);
    let rotation = Rotation::new(center, angle);
    // rotated eyes sit at center.x -/+ d/2 on row center.y
    let x_left = center.x - 0.5 * d;
    let crop_box = BoundingBox {
        x: x_left - params.c * d,
        y: center.y - params.a * d,
        w: (1.0 + 2.0 * params.c) * d,
        h: (params.a + params.b) * d,
    };
    Ok(AlignGeometry {
        rotation,
        angle,
        crop_box,
        eye_distance: d,
    })
}

pub fn align_face(
    img: &ImageBuffer,
    lm: &FaceLandmarks,
    params: &AlignParams,
) -> Result<AlignedFace, AlignError> {
    let geom = alignment_geometry(lm, params)?;
    let cropped = rotate_then_crop(img, geom.rotation.center, geom.angle, &geom.crop_box)?;
    let grid = geom.crop_box.pixel_grid();
    let side = params.output_side;
    let image = resize(&cropped, side, side);

    let shift = Affine2([[1.0, 0.0, -(grid.x as f64)], [0.0, 1.0, -(grid.y as f64)]]);
    let scale = Affine2([
        [side as f64 / grid.w as f64, 0.0, 0.0],
        [0.0, side as f64 / grid.h as f64, 0.0],
    ]);
    let transform = scale.compose(&shift.compose(&Affine2::from(&geom.rotation)));

    Ok(AlignedFace {
        image,
        transform,
        crop_box: geom.crop_box,
        crop_grid: grid,
        rotation_angle: geom.angle,
        rotation_center: geom.rotation.center,
        source_landmarks: *lm,
    })
}

/// Undo a crop + resize: `p_src = (p.x / sx + box.x, p.y / sy + box.y)`.
pub fn map_landmarks_to_source(
    lm_crop: &FaceLandmarks,
    crop_box: &BoundingBox,
    crop_scale: (f64, f64),
) -> Result<FaceLandmarks, AlignError> {
    let (sx, sy) = crop_scale;
    if !(sx.is_finite() && sy.is_finite() && sx > 0.0 && sy > 0.0) {
        return Err(AlignError::Scale(sx, sy));
    }
    Ok(lm_crop.map(|p| Point2::new(p.x / sx + crop_box.x, p.y / sy + crop_box.y)))
}

/// Forward counterpart of [`map_landmarks_to_source`].
pub fn map_point_to_crop(p: Point2, crop_box: &BoundingBox, crop_scale: (f64, f64)) -> Point2 {
    Point2::new(
        (p.x - crop_box.x) * crop_scale.0,
        (p.y - crop_box.y) * crop_scale.1,
    )
}
