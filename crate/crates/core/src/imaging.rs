//! Raster images and the numeric kernels shared by the pipeline.
//!
//! Coordinates are continuous with the origin at the top-left image corner,
//! x rightward and y downward. Pixel `(row i, col j)` covers
//! `[j, j+1) x [i, i+1)` and its center sits at `(j + 0.5, i + 0.5)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod io;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ImagingError {
    #[error("invalid image shape {width}x{height}x{channels} for {len} samples")]
    Shape {
        width: usize,
        height: usize,
        channels: usize,
        len: usize,
    },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    Channels(usize),
    #[error("crop box rounds to an empty image ({w}x{h})")]
    EmptyCrop { w: i64, h: i64 },
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),
}

/// Row-major 8-bit image with 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImageBuffer")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl ImageBuffer {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        pixels: Vec<u8>,
    ) -> Result<Self, ImagingError> {
        if channels != 1 && channels != 3 {
            return Err(ImagingError::Channels(channels));
        }
        if width == 0 || height == 0 || pixels.len() != width * height * channels {
            return Err(ImagingError::Shape {
                width,
                height,
                channels,
                len: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// All-black image. Panics on zero dimensions or a bad channel count.
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        Self::new(width, height, channels, vec![value; width * height * channels])
            .expect("valid image shape")
    }

    pub fn from_fn_gray(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for i in 0..height {
            for j in 0..width {
                pixels.push(f(i, j));
            }
        }
        Self::new(width, height, 1, pixels).expect("valid image shape")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> u8 {
        self.pixels[(row * self.width + col) * self.channels + channel]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: u8) {
        let idx = (row * self.width + col) * self.channels + channel;
        self.pixels[idx] = value;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn midpoint(&self, other: &Point2) -> Point2 {
        Point2::new((self.x + other.x) * 0.5, (self.y + other.y) * 0.5)
    }
}

/// Axis-aligned box in pixel coordinates; `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, ImagingError> {
        let b = Self { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), ImagingError> {
        if !(self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite())
        {
            return Err(ImagingError::InvalidBox(format!("non-finite box {self:?}")));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(ImagingError::InvalidBox(format!(
                "box extent must be positive, got {}x{}",
                self.w, self.h
            )));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// The integer pixel grid actually covered by [`crop`]: rounded origin and extent.
    pub fn pixel_grid(&self) -> PixelRect {
        PixelRect {
            x: self.x.round() as i64,
            y: self.y.round() as i64,
            w: self.w.round() as i64,
            h: self.h.round() as i64,
        }
    }

    /// Intersect with `[0, width) x [0, height)`. `None` if nothing is left.
    pub fn clamp_to(&self, width: usize, height: usize) -> Option<BoundingBox> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = (self.x + self.w).min(width as f64);
        let y1 = (self.y + self.h).min(height as f64);
        if x1 > x0 && y1 > y0 {
            Some(BoundingBox {
                x: x0,
                y: y0,
                w: x1 - x0,
                h: y1 - y0,
            })
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WindowKind {
    Gaussian { sigma: f64 },
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window_side: usize,
    pub window_kind: WindowKind,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
    pub compare_size: usize,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window_side: 11,
            window_kind: WindowKind::Gaussian { sigma: 1.5 },
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 255.0,
            compare_size: 256,
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.window_side < 3 || self.window_side % 2 == 0 {
            return Err(format!("window_side must be odd and >= 3, got {}", self.window_side));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.dynamic_range > 0.0) {
            return Err("k1, k2 and dynamic_range must be positive".into());
        }
        if let WindowKind::Gaussian { sigma } = self.window_kind {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(format!("gaussian sigma must be positive, got {sigma}"));
            }
        }
        if self.compare_size < self.window_side {
            return Err(format!(
                "compare_size {} smaller than window {}",
                self.compare_size, self.window_side
            ));
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalized 1-D window; the 2-D window is its outer product.
    pub fn window_1d(&self) -> Vec<f64> {
        let n = self.window_side;
        let raw: Vec<f64> = match self.window_kind {
            WindowKind::Uniform => vec![1.0; n],
            WindowKind::Gaussian { sigma } => {
                let half = (n / 2) as f64;
                (0..n)
                    .map(|k| {
                        let t = k as f64 - half;
                        (-(t * t) / (2.0 * sigma * sigma)).exp()
                    })
                    .collect()
            }
        };
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    }
}

/// ITU-R 601 luma with round-half-away-from-zero. Gray input is returned unchanged.
pub fn to_grayscale(img: &ImageBuffer) -> ImageBuffer {
    if img.channels == 1 {
        return img.clone();
    }
    let pixels = img
        .pixels
        .chunks_exact(3)
        .map(|p| {
            let y = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
            y.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    ImageBuffer::new(img.width, img.height, 1, pixels).expect("shape preserved")
}

#[inline]
fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Bilinear sample at continuous coordinate `(x, y)`; neighbors outside the
/// image contribute black.
#[inline]
fn sample_black(img: &ImageBuffer, x: f64, y: f64, out: &mut [f64]) {
    let fx = x - 0.5;
    let fy = y - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let tx = fx - x0;
    let ty = fy - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let w = img.width as i64;
    let h = img.height as i64;
    let c = img.channels;
    out[..c].iter_mut().for_each(|v| *v = 0.0);
    if x0 + 1 < 0 || y0 + 1 < 0 || x0 >= w || y0 >= h {
        return;
    }
    let taps = [
        (x0, y0, (1.0 - tx) * (1.0 - ty)),
        (x0 + 1, y0, tx * (1.0 - ty)),
        (x0, y0 + 1, (1.0 - tx) * ty),
        (x0 + 1, y0 + 1, tx * ty),
    ];
    for (px, py, wgt) in taps {
        if wgt == 0.0 || px < 0 || py < 0 || px >= w || py >= h {
            continue;
        }
        let base = (py as usize * img.width + px as usize) * c;
        for ch in 0..c {
            out[ch] += wgt * img.pixels[base + ch] as f64;
        }
    }
}

/// Resample `img` onto a `width x height` grid. `map` takes the continuous
/// center of an output pixel and returns the source coordinate to sample.
pub fn warp(
    img: &ImageBuffer,
    width: usize,
    height: usize,
    map: impl Fn(f64, f64) -> (f64, f64),
) -> ImageBuffer {
    let c = img.channels;
    let mut out = ImageBuffer::zeros(width, height, c);
    let mut acc = [0.0f64; 3];
    for i in 0..height {
        let yc = i as f64 + 0.5;
        for j in 0..width {
            let (sx, sy) = map(j as f64 + 0.5, yc);
            sample_black(img, sx, sy, &mut acc);
            let base = (i * width + j) * c;
            for ch in 0..c {
                out.pixels[base + ch] = to_u8(acc[ch]);
            }
        }
    }
    out
}

/// Forward rotation about `center`: a positive angle turns content
/// counter-clockwise as displayed (y down), so `(cx + r, cy)` moves to
/// `(cx, cy - r)` under a quarter turn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    pub center: Point2,
    pub cos: f64,
    pub sin: f64,
}

impl Rotation {
    pub fn new(center: Point2, angle: f64) -> Self {
        Self {
            center,
            cos: angle.cos(),
            sin: angle.sin(),
        }
    }

    #[inline]
    pub fn apply(&self, p: Point2) -> Point2 {
        let dx = p.x - self.center.x;
        let dy = p.y - self.center.y;
        Point2::new(
            self.center.x + self.cos * dx + self.sin * dy,
            self.center.y - self.sin * dx + self.cos * dy,
        )
    }

    #[inline]
    pub fn invert(&self, p: Point2) -> Point2 {
        let dx = p.x - self.center.x;
        let dy = p.y - self.center.y;
        Point2::new(
            self.center.x + self.cos * dx - self.sin * dy,
            self.center.y + self.sin * dx + self.cos * dy,
        )
    }
}

/// Rotate about `center`, same output size, bilinear sampling, black fill.
pub fn rotate_about(img: &ImageBuffer, center: Point2, angle: f64) -> ImageBuffer {
    let rot = Rotation::new(center, angle);
    warp(img, img.width, img.height, |x, y| {
        let q = rot.invert(Point2::new(x, y));
        (q.x, q.y)
    })
}

fn crop_dims(b: &BoundingBox) -> Result<PixelRect, ImagingError> {
    b.validate()?;
    let r = b.pixel_grid();
    if r.w <= 0 || r.h <= 0 {
        return Err(ImagingError::EmptyCrop { w: r.w, h: r.h });
    }
    Ok(r)
}

/// Cut `bbox` out of `img`. The output is always exactly the rounded box;
/// parts outside the image are black.
pub fn crop(img: &ImageBuffer, bbox: &BoundingBox) -> Result<ImageBuffer, ImagingError> {
    let r = crop_dims(bbox)?;
    let (w, h) = (r.w as usize, r.h as usize);
    let c = img.channels;
    let mut out = ImageBuffer::zeros(w, h, c);
    let iw = img.width as i64;
    let ih = img.height as i64;
    let col_lo = (-r.x).clamp(0, r.w);
    let col_hi = (iw - r.x).clamp(0, r.w);
    if col_lo >= col_hi {
        return Ok(out);
    }
    for i in 0..r.h {
        let sy = r.y + i;
        if sy < 0 || sy >= ih {
            continue;
        }
        let src = ((sy * iw + r.x + col_lo) as usize) * c;
        let dst = ((i * r.w + col_lo) as usize) * c;
        let n = ((col_hi - col_lo) as usize) * c;
        out.pixels[dst..dst + n].copy_from_slice(&img.pixels[src..src + n]);
    }
    Ok(out)
}

/// `crop(&rotate_about(img, center, angle), bbox)` without materializing
/// the full rotated image. Pixel values are identical to the two-step form.
pub fn rotate_then_crop(
    img: &ImageBuffer,
    center: Point2,
    angle: f64,
    bbox: &BoundingBox,
) -> Result<ImageBuffer, ImagingError> {
    let r = crop_dims(bbox)?;
    let rot = Rotation::new(center, angle);
    let (iw, ih) = (img.width as i64, img.height as i64);
    let c = img.channels;
    let (w, h) = (r.w as usize, r.h as usize);
    let mut out = ImageBuffer::zeros(w, h, c);
    let mut acc = [0.0f64; 3];
    for i in 0..r.h {
        let ry = r.y + i;
        if ry < 0 || ry >= ih {
            continue;
        }
        for j in 0..r.w {
            let rx = r.x + j;
            if rx < 0 || rx >= iw {
                continue;
            }
            let q = rot.invert(Point2::new(rx as f64 + 0.5, ry as f64 + 0.5));
            sample_black(img, q.x, q.y, &mut acc);
            let base = ((i * r.w + j) as usize) * c;
            for ch in 0..c {
                out.pixels[base + ch] = to_u8(acc[ch]);
            }
        }
    }
    Ok(out)
}

#[inline]
fn sample_clamped(img: &ImageBuffer, x: f64, y: f64, out: &mut [f64]) {
    let maxx = (img.width - 1) as f64;
    let maxy = (img.height - 1) as f64;
    let fx = (x - 0.5).clamp(0.0, maxx);
    let fy = (y - 0.5).clamp(0.0, maxy);
    let x0 = fx.floor() as usize;
    let y0 = fy.floor() as usize;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let tx = fx - x0 as f64;
    let ty = fy - y0 as f64;
    let c = img.channels;
    for ch in 0..c {
        let p = |r: usize, col: usize| img.pixels[(r * img.width + col) * c + ch] as f64;
        let top = p(y0, x0) * (1.0 - tx) + p(y0, x1) * tx;
        let bot = p(y1, x0) * (1.0 - tx) + p(y1, x1) * tx;
        out[ch] = top * (1.0 - ty) + bot * ty;
    }
}

/// Bilinear resize with pixel-center alignment (`x_src = x_dst * in/out`)
/// and edge clamping. Aspect ratio is not preserved.
pub fn resize(img: &ImageBuffer, out_w: usize, out_h: usize) -> ImageBuffer {
    assert!(out_w >= 1 && out_h >= 1, "resize target must be non-empty");
    if out_w == img.width && out_h == img.height {
        return img.clone();
    }
    let sx = img.width as f64 / out_w as f64;
    let sy = img.height as f64 / out_h as f64;
    let c = img.channels;
    let mut out = ImageBuffer::zeros(out_w, out_h, c);
    let mut acc = [0.0f64; 3];
    for i in 0..out_h {
        let y = (i as f64 + 0.5) * sy;
        for j in 0..out_w {
            sample_clamped(img, (j as f64 + 0.5) * sx, y, &mut acc);
            let base = (i * out_w + j) * c;
            for ch in 0..c {
                out.pixels[base + ch] = to_u8(acc[ch]);
            }
        }
    }
    out
}

/// An image reduced to the square grayscale grid SSIM compares on, with its
/// windowed first and second moments cached.
#[derive(Debug, Clone)]
pub struct SsimPrepared {
    side: usize,
    values: Vec<f64>,
    mean: Vec<f64>,
    mean_sq: Vec<f64>,
}

impl SsimPrepared {
    pub fn new(img: &ImageBuffer, params: &SsimParams) -> Self {
        let side = params.compare_size;
        let gray = resize(&to_grayscale(img), side, side);
        let values: Vec<f64> = gray.pixels.iter().map(|&v| v as f64).collect();
        let window = params.window_1d();
        let mean = filter_valid(&values, side, &window);
        let squares: Vec<f64> = values.iter().map(|v| v * v).collect();
        let mean_sq = filter_valid(&squares, side, &window);
        Self {
            side,
            values,
            mean,
            mean_sq,
        }
    }
}

/// Separable correlation keeping only windows fully inside the image.
fn filter_valid(values: &[f64], side: usize, window: &[f64]) -> Vec<f64> {
    let n = window.len();
    let out_side = side + 1 - n;
    let mut horiz = vec![0.0; side * out_side];
    for r in 0..side {
        let row = &values[r * side..(r + 1) * side];
        for c in 0..out_side {
            let mut s = 0.0;
            for (k, w) in window.iter().enumerate() {
                s += w * row[c + k];
            }
            horiz[r * out_side + c] = s;
        }
    }
    let mut out = vec![0.0; out_side * out_side];
    for r in 0..out_side {
        for c in 0..out_side {
            let mut s = 0.0;
            for (k, w) in window.iter().enumerate() {
                s += w * horiz[(r + k) * out_side + c];
            }
            out[r * out_side + c] = s;
        }
    }
    out
}

/// Mean SSIM over all valid window positions of two prepared images.
pub fn ssim_prepared(a: &SsimPrepared, b: &SsimPrepared, params: &SsimParams) -> f64 {
    assert_eq!(a.side, b.side, "prepared with different compare sizes");
    let window = params.window_1d();
    let cross: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x * y).collect();
    let mean_ab = filter_valid(&cross, a.side, &window);
    let c1 = params.c1();
    let c2 = params.c2();
    let mut total = 0.0;
    for k in 0..mean_ab.len() {
        let (ma, mb) = (a.mean[k], b.mean[k]);
        let va = a.mean_sq[k] - ma * ma;
        let vb = b.mean_sq[k] - mb * mb;
        let cov = mean_ab[k] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        total += num / den;
    }
    total / mean_ab.len() as f64
}

/// Structural similarity of two arbitrary images after grayscale conversion
/// and a square resize to `params.compare_size`.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer, params: &SsimParams) -> f64 {
    let pa = SsimPrepared::new(a, params);
    let pb = SsimPrepared::new(b, params);
    ssim_prepared(&pa, &pb, params)
}
