//! Disk-mask landmark encoding and its inverse.
//!
//! Each landmark is drawn as a filled disk of 255s on a black canvas, one
//! channel per landmark (left eye, right eye, nose). Predicted masks are
//! turned back into points by taking the centroid of their lit pixels.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{ImageBuffer, Point2};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum LandmarkError {
    #[error("landmark not found: {channel} mask has no lit pixels")]
    NotFound { channel: &'static str },
    #[error("mask must be single channel, got {0} channels")]
    MaskChannels(usize),
    #[error("mask dimensions differ: {0}")]
    MaskDims(String),
    #[error("mask pixel {value} at index {index} is not 0 or 255")]
    NotBinary { index: usize, value: u8 },
    #[error("{name} landmark ({x}, {y}) lies outside the {width}x{height} canvas")]
    OutsideCanvas {
        name: &'static str,
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("invalid landmarks: {0}")]
    Invalid(String),
    #[error("invalid mask parameters: {0}")]
    Params(String),
    #[error("cannot score landmarks: {0}")]
    Evaluation(String),
}

/// Left eye, right eye and nose centers. "Left" is the eye with smaller x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceLandmarks {
    pub left_eye: Point2,
    pub right_eye: Point2,
    pub nose: Point2,
}

impl FaceLandmarks {
    pub fn new(left_eye: Point2, right_eye: Point2, nose: Point2) -> Result<Self, LandmarkError> {
        let lm = Self {
            left_eye,
            right_eye,
            nose,
        };
        lm.validate()?;
        Ok(lm)
    }

    pub fn validate(&self) -> Result<(), LandmarkError> {
        if !(self.left_eye.is_finite() && self.right_eye.is_finite() && self.nose.is_finite()) {
            return Err(LandmarkError::Invalid("non-finite coordinate".into()));
        }
        if self.left_eye == self.right_eye {
            return Err(LandmarkError::Invalid("eye centers coincide".into()));
        }
        if self.left_eye.x >= self.right_eye.x {
            return Err(LandmarkError::Invalid(format!(
                "left eye x ({}) must be smaller than right eye x ({})",
                self.left_eye.x, self.right_eye.x
            )));
        }
        Ok(())
    }

    pub fn points(&self) -> [Point2; 3] {
        [self.left_eye, self.right_eye, self.nose]
    }

    pub fn map(&self, f: impl Fn(Point2) -> Point2) -> FaceLandmarks {
        FaceLandmarks {
            left_eye: f(self.left_eye),
            right_eye: f(self.right_eye),
            nose: f(self.nose),
        }
    }

    pub fn inter_eye_distance(&self) -> f64 {
        self.left_eye.distance(&self.right_eye)
    }
}

pub const CHANNEL_NAMES: [&str; 3] = ["left_eye", "right_eye", "nose"];

/// Three co-registered binary masks holding only 0 and 255.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskTriple {
    left_eye: ImageBuffer,
    right_eye: ImageBuffer,
    nose: ImageBuffer,
}

impl MaskTriple {
    pub fn new(
        left_eye: ImageBuffer,
        right_eye: ImageBuffer,
        nose: ImageBuffer,
    ) -> Result<Self, LandmarkError> {
        let masks = [&left_eye, &right_eye, &nose];
        for m in masks {
            if m.channels() != 1 {
                return Err(LandmarkError::MaskChannels(m.channels()));
            }
            if let Some((index, &value)) =
                m.pixels().iter().enumerate().find(|(_, &v)| v != 0 && v != 255)
            {
                return Err(LandmarkError::NotBinary { index, value });
            }
        }
        let dims = |m: &ImageBuffer| (m.width(), m.height());
        if dims(&left_eye) != dims(&right_eye) || dims(&left_eye) != dims(&nose) {
            return Err(LandmarkError::MaskDims(format!(
                "{:?} / {:?} / {:?}",
                dims(&left_eye),
                dims(&right_eye),
                dims(&nose)
            )));
        }
        Ok(Self {
            left_eye,
            right_eye,
            nose,
        })
    }

    /// Binarize soft segmenter output at `> 127` and build a triple.
    pub fn from_soft(
        left_eye: &ImageBuffer,
        right_eye: &ImageBuffer,
        nose: &ImageBuffer,
    ) -> Result<Self, LandmarkError> {
        let bin = |m: &ImageBuffer| -> Result<ImageBuffer, LandmarkError> {
            if m.channels() != 1 {
                return Err(LandmarkError::MaskChannels(m.channels()));
            }
            let px = m.pixels().iter().map(|&v| if v > 127 { 255 } else { 0 }).collect();
            Ok(ImageBuffer::new(m.width(), m.height(), 1, px).expect("same shape"))
        };
        Self::new(bin(left_eye)?, bin(right_eye)?, bin(nose)?)
    }

    /// Split an interleaved 3-channel mask image (left eye, right eye, nose).
    pub fn from_interleaved(img: &ImageBuffer) -> Result<Self, LandmarkError> {
        if img.channels() != 3 {
            return Err(LandmarkError::MaskChannels(img.channels()));
        }
        let plane = |c: usize| {
            let px = img.pixels().chunks_exact(3).map(|p| p[c]).collect();
            ImageBuffer::new(img.width(), img.height(), 1, px).expect("same shape")
        };
        Self::new(plane(0), plane(1), plane(2))
    }

    pub fn to_interleaved(&self) -> ImageBuffer {
        let n = self.left_eye.pixels().len();
        let mut px = Vec::with_capacity(n * 3);
        for k in 0..n {
            px.push(self.left_eye.pixels()[k]);
            px.push(self.right_eye.pixels()[k]);
            px.push(self.nose.pixels()[k]);
        }
        ImageBuffer::new(self.left_eye.width(), self.left_eye.height(), 3, px)
            .expect("same shape")
    }

    pub fn left_eye(&self) -> &ImageBuffer {
        &self.left_eye
    }

    pub fn right_eye(&self) -> &ImageBuffer {
        &self.right_eye
    }

    pub fn nose(&self) -> &ImageBuffer {
        &self.nose
    }

    pub fn channels(&self) -> [&ImageBuffer; 3] {
        [&self.left_eye, &self.right_eye, &self.nose]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskParams {
    pub eye_radius: f64,
    pub nose_radius: f64,
    pub canvas_width: usize,
    pub canvas_height: usize,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            eye_radius: 7.0,
            nose_radius: 13.0,
            canvas_width: 224,
            canvas_height: 224,
        }
    }
}

impl MaskParams {
    pub fn with_canvas(side: usize) -> Self {
        Self {
            canvas_width: side,
            canvas_height: side,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), LandmarkError> {
        if !(self.eye_radius >= 1.0 && self.nose_radius >= 1.0) {
            return Err(LandmarkError::Params("radii must be >= 1".into()));
        }
        if self.canvas_width == 0 || self.canvas_height == 0 {
            return Err(LandmarkError::Params("empty canvas".into()));
        }
        Ok(())
    }
}

/// Disk of 255s at every pixel whose center is within `radius` of `center`.
pub fn render_disk(width: usize, height: usize, center: Point2, radius: f64) -> ImageBuffer {
    let mut img = ImageBuffer::zeros(width, height, 1);
    let r2 = radius * radius;
    let row_lo = ((center.y - radius - 0.5).floor().max(0.0)) as usize;
    let row_hi = ((center.y + radius + 0.5).ceil().max(0.0) as usize).min(height);
    let col_lo = ((center.x - radius - 0.5).floor().max(0.0)) as usize;
    let col_hi = ((center.x + radius + 0.5).ceil().max(0.0) as usize).min(width);
    for i in row_lo..row_hi {
        let dy = i as f64 + 0.5 - center.y;
        for j in col_lo..col_hi {
            let dx = j as f64 + 0.5 - center.x;
            if dx * dx + dy * dy <= r2 {
                img.set(i, j, 0, 255);
            }
        }
    }
    img
}

pub fn render_masks(lm: &FaceLandmarks, params: &MaskParams) -> Result<MaskTriple, LandmarkError> {
    params.validate()?;
    let (w, h) = (params.canvas_width, params.canvas_height);
    for (name, p) in CHANNEL_NAMES.iter().zip(lm.points()) {
        let inside = p.is_finite() && p.x >= 0.0 && p.y >= 0.0 && p.x < w as f64 && p.y < h as f64;
        if !inside {
            return Err(LandmarkError::OutsideCanvas {
                name,
                x: p.x,
                y: p.y,
                width: w,
                height: h,
            });
        }
    }
    MaskTriple::new(
        render_disk(w, h, lm.left_eye, params.eye_radius),
        render_disk(w, h, lm.right_eye, params.eye_radius),
        render_disk(w, h, lm.nose, params.nose_radius),
    )
}

fn centroid_named(mask: &ImageBuffer, channel: &'static str) -> Result<Point2, LandmarkError> {
    if mask.channels() != 1 {
        return Err(LandmarkError::MaskChannels(mask.channels()));
    }
    let (mut sx, mut sy, mut n) = (0.0f64, 0.0f64, 0u64);
    let w = mask.width();
    for (k, &v) in mask.pixels().iter().enumerate() {
        if v > 127 {
            sx += (k % w) as f64 + 0.5;
            sy += (k / w) as f64 + 0.5;
            n += 1;
        }
    }
    if n == 0 {
        return Err(LandmarkError::NotFound { channel });
    }
    Ok(Point2::new(sx / n as f64, sy / n as f64))
}

/// Unweighted mean of the centers of all pixels brighter than 127.
pub fn centroid_of_mask(mask: &ImageBuffer) -> Result<Point2, LandmarkError> {
    centroid_named(mask, "mask")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractedLandmarks {
    pub landmarks: FaceLandmarks,
    /// The eye channels came out in the wrong x-order and were exchanged.
    pub swapped: bool,
}

pub fn extract_landmarks(masks: &MaskTriple) -> Result<ExtractedLandmarks, LandmarkError> {
    let left = centroid_named(&masks.left_eye, CHANNEL_NAMES[0])?;
    let right = centroid_named(&masks.right_eye, CHANNEL_NAMES[1])?;
    let nose = centroid_named(&masks.nose, CHANNEL_NAMES[2])?;
    let swapped = left.x > right.x;
    let (left, right) = if swapped { (right, left) } else { (left, right) };
    let landmarks = FaceLandmarks::new(left, right, nose)?;
    Ok(ExtractedLandmarks { landmarks, swapped })
}

/// Per-landmark localization error over a set of faces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkErrorReport {
    /// Mean Euclidean distance in pixels, ordered left eye, right eye, nose.
    pub mean_distance: [f64; 3],
    pub average: f64,
    /// Mean squared Euclidean distance (pixels²), same order.
    pub mean_squared: [f64; 3],
    pub count: usize,
}

pub fn localization_error(
    predicted: &[FaceLandmarks],
    truth: &[FaceLandmarks],
) -> Result<LandmarkErrorReport, LandmarkError> {
    if predicted.len() != truth.len() {
        return Err(LandmarkError::Evaluation(format!(
            "{} predictions for {} ground-truth faces",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(LandmarkError::Evaluation("no faces to evaluate".into()));
    }
    let mut dist = [0.0f64; 3];
    let mut sq = [0.0f64; 3];
    for (p, t) in predicted.iter().zip(truth) {
        for (k, (a, b)) in p.points().iter().zip(t.points()).enumerate() {
            let d = a.distance(&b);
            dist[k] += d;
            sq[k] += d * d;
        }
    }
    let n = predicted.len() as f64;
    let mean_distance = dist.map(|v| v / n);
    Ok(LandmarkErrorReport {
        mean_distance,
        average: mean_distance.iter().sum::<f64>() / 3.0,
        mean_squared: sq.map(|v| v / n),
        count: predicted.len(),
    })
}

impl fmt::Display for LandmarkErrorReport {
    /// Two-row table: landmark names, then errors in pixels.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let headers = [
            "Landmarks",
            "Left eye center",
            "Right eye center",
            "Nose center",
            "Average error",
        ];
        let values = [
            "Error (pixels)".to_string(),
            format!("{:.2}", self.mean_distance[0]),
            format!("{:.2}", self.mean_distance[1]),
            format!("{:.2}", self.mean_distance[2]),
            format!("{:.2}", self.average),
        ];
        let widths: Vec<usize> = headers
            .iter()
            .zip(&values)
            .map(|(h, v)| h.len().max(v.len()))
            .collect();
        let row = |cells: Vec<&str>| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:^w$}"))
                .collect::<Vec<_>>()
                .join(" | ")
        };
        writeln!(f, "{}", row(headers.to_vec()))?;
        writeln!(
            f,
            "{}",
            widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-|-")
        )?;
        write!(f, "{}", row(values.iter().map(String::as_str).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lm(l: (f64, f64), r: (f64, f64), n: (f64, f64)) -> FaceLandmarks {
        FaceLandmarks::new(
            Point2::new(l.0, l.1),
            Point2::new(r.0, r.1),
            Point2::new(n.0, n.1),
        )
        .unwrap()
    }

    fn lit(m: &ImageBuffer) -> usize {
        m.pixels().iter().filter(|&&v| v == 255).count()
    }

    #[test]
    fn disk_at_pixel_center_has_gauss_count() {
        // integer lattice points within radius 7: 149
        let d = render_disk(224, 224, Point2::new(112.5, 112.5), 7.0);
        assert_eq!(lit(&d), 149);
    }

    #[test]
    fn radius_one_covers_pixel_under_landmark() {
        let d = render_disk(10, 10, Point2::new(3.2, 6.9), 1.0);
        assert_eq!(d.get(6, 3, 0), 255);
    }

    #[test]
    fn separated_eyes_do_not_overlap() {
        let m = render_masks(&lm((80.0, 100.0), (130.0, 100.0), (105.0, 140.0)), &MaskParams::default())
            .unwrap();
        assert!(m
            .left_eye()
            .pixels()
            .iter()
            .zip(m.right_eye().pixels())
            .all(|(a, b)| !(*a == 255 && *b == 255)));
    }

    #[test]
    fn outside_canvas_is_rejected() {
        let err = render_masks(&lm((80.0, 100.0), (230.0, 100.0), (105.0, 140.0)), &MaskParams::default())
            .unwrap_err();
        assert!(matches!(err, LandmarkError::OutsideCanvas { name: "right_eye", .. }));
    }

    #[test]
    fn centroid_cases() {
        let mut m = ImageBuffer::zeros(8, 8, 1);
        m.set(2, 5, 0, 255);
        assert_eq!(centroid_of_mask(&m).unwrap(), Point2::new(5.5, 2.5));
        let empty = ImageBuffer::zeros(8, 8, 1);
        assert!(matches!(centroid_of_mask(&empty), Err(LandmarkError::NotFound { .. })));
        let d = render_disk(64, 64, Point2::new(30.0, 20.0), 5.0);
        let c = centroid_of_mask(&d).unwrap();
        assert!((c.x - 30.0).abs() < 1e-12 && (c.y - 20.0).abs() < 1e-12);
        // soft values just above the cut count as lit
        let mut soft = ImageBuffer::zeros(4, 4, 1);
        soft.set(1, 1, 0, 128);
        soft.set(3, 3, 0, 127);
        assert_eq!(centroid_of_mask(&soft).unwrap(), Point2::new(1.5, 1.5));
    }

    #[test]
    fn swapped_eye_channels_are_reordered() {
        let truth = lm((70.0, 90.0), (150.0, 95.0), (110.0, 140.0));
        let m = render_masks(&truth, &MaskParams::default()).unwrap();
        let flipped = MaskTriple::new(m.right_eye().clone(), m.left_eye().clone(), m.nose().clone())
            .unwrap();
        let out = extract_landmarks(&flipped).unwrap();
        assert!(out.swapped);
        assert!(out.landmarks.left_eye.x < out.landmarks.right_eye.x);
        assert!(out.landmarks.left_eye.distance(&truth.left_eye) < 0.5);
        assert!(!extract_landmarks(&m).unwrap().swapped);
    }

    #[test]
    fn empty_nose_channel_is_named() {
        let m = render_masks(&lm((70.0, 90.0), (150.0, 95.0), (110.0, 140.0)), &MaskParams::default())
            .unwrap();
        let no_nose =
            MaskTriple::new(m.left_eye().clone(), m.right_eye().clone(), ImageBuffer::zeros(224, 224, 1))
                .unwrap();
        let err = extract_landmarks(&no_nose).unwrap_err();
        assert_eq!(err, LandmarkError::NotFound { channel: "nose" });
        assert!(err.to_string().contains("nose"));
    }

    #[test]
    fn mask_triple_rejects_gray_values_and_mismatch() {
        let a = ImageBuffer::filled(4, 4, 1, 200);
        let z = ImageBuffer::zeros(4, 4, 1);
        assert!(matches!(MaskTriple::new(a, z.clone(), z.clone()), Err(LandmarkError::NotBinary { .. })));
        assert!(matches!(
            MaskTriple::new(z.clone(), z.clone(), ImageBuffer::zeros(5, 4, 1)),
            Err(LandmarkError::MaskDims(_))
        ));
    }

    #[test]
    fn interleaved_round_trip() {
        let m = render_masks(&lm((70.0, 90.0), (150.0, 95.0), (110.0, 140.0)), &MaskParams::default())
            .unwrap();
        assert_eq!(MaskTriple::from_interleaved(&m.to_interleaved()).unwrap(), m);
    }

    #[test]
    fn error_report_cases() {
        let truth = vec![
            lm((70.0, 90.0), (150.0, 95.0), (110.0, 140.0)),
            lm((60.0, 80.0), (140.0, 85.0), (100.0, 130.0)),
        ];
        let zero = localization_error(&truth, &truth).unwrap();
        assert_eq!(zero.mean_distance, [0.0; 3]);
        assert_eq!(zero.average, 0.0);
        let shifted: Vec<_> = truth
            .iter()
            .map(|l| l.map(|p| Point2::new(p.x + 3.0, p.y)))
            .collect();
        let r = localization_error(&shifted, &truth).unwrap();
        assert_eq!(r.mean_distance, [3.0; 3]);
        assert_eq!(r.average, 3.0);
        assert_eq!(r.mean_squared, [9.0; 3]);
        assert_eq!(r.count, 2);
        assert!(localization_error(&shifted[..1], &truth).is_err());
        assert!(localization_error(&[], &[]).is_err());
    }

    #[test]
    fn report_renders_table_layout() {
        let r = LandmarkErrorReport {
            mean_distance: [3.09, 2.98, 3.32],
            average: 3.13,
            mean_squared: [0.0; 3],
            count: 1,
        };
        let s = r.to_string();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines.len(), 3);
        for h in ["Left eye center", "Right eye center", "Nose center", "Average error"] {
            assert!(lines[0].contains(h));
        }
        for v in ["3.09", "2.98", "3.32", "3.13"] {
            assert!(lines[2].contains(v));
        }
    }

    #[test]
    fn landmark_invariants() {
        let p = Point2::new(5.0, 5.0);
        assert!(FaceLandmarks::new(p, p, p).is_err());
        assert!(FaceLandmarks::new(Point2::new(9.0, 1.0), Point2::new(3.0, 1.0), p).is_err());
        assert!(FaceLandmarks::new(Point2::new(f64::NAN, 1.0), Point2::new(3.0, 1.0), p).is_err());
    }
}
