//! PNG-class file adapter. Everything else in the crate works on [`ImageBuffer`].

use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};
use thiserror::Error;

use super::ImageBuffer;

#[derive(Error, Debug)]
pub enum ImageIoError {
    #[error("failed to read image {path}: {message}")]
    Read { path: String, message: String },
    #[error("failed to write image {path}: {message}")]
    Write { path: String, message: String },
}

/// Decode any supported raster file. Gray and gray+alpha stay single channel,
/// everything else becomes RGB.
pub fn load_image(path: &Path) -> Result<ImageBuffer, ImageIoError> {
    let err = |message: String| ImageIoError::Read {
        path: path.display().to_string(),
        message,
    };
    let dynamic = image::open(path).map_err(|e| err(e.to_string()))?;
    let gray = matches!(
        dynamic,
        DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
    );
    let (w, h, channels, raw) = if gray {
        let g = dynamic.into_luma8();
        (g.width(), g.height(), 1, g.into_raw())
    } else {
        let rgb = dynamic.into_rgb8();
        (rgb.width(), rgb.height(), 3, rgb.into_raw())
    };
    ImageBuffer::new(w as usize, h as usize, channels, raw).map_err(|e| err(e.to_string()))
}

/// Encode by file extension (PNG recommended: lossless keeps masks exactly 0/255).
pub fn save_image(img: &ImageBuffer, path: &Path) -> Result<(), ImageIoError> {
    let err = |message: String| ImageIoError::Write {
        path: path.display().to_string(),
        message,
    };
    let (w, h) = (img.width() as u32, img.height() as u32);
    let raw = img.pixels().to_vec();
    let result = if img.channels() == 1 {
        GrayImage::from_raw(w, h, raw)
            .ok_or_else(|| err("buffer size mismatch".into()))?
            .save(path)
    } else {
        RgbImage::from_raw(w, h, raw)
            .ok_or_else(|| err("buffer size mismatch".into()))?
            .save(path)
    };
    result.map_err(|e| err(e.to_string()))
}
