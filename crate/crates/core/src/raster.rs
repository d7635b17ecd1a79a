//! RGB raster helpers: the bi-temporal pair, cropping, bilinear resampling
//! and PNG coding.

use std::io::Cursor;
use std::path::Path;

use image::{imageops, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, PatchRect};
use crate::mask::pixel_span;

/// Geo-aligned pre- and post-event rasters of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub scene_id: String,
    pub pre: RgbImage,
    pub post: RgbImage,
}

impl ImagePair {
    pub fn new(scene_id: impl Into<String>, pre: RgbImage, post: RgbImage) -> Result<Self> {
        if pre.dimensions() != post.dimensions() {
            let (pw, ph) = pre.dimensions();
            let (qw, qh) = post.dimensions();
            return Err(Error::DimensionMismatch {
                expected: (ph as usize, pw as usize),
                actual: (qh as usize, qw as usize),
            });
        }
        Ok(Self { scene_id: scene_id.into(), pre, post })
    }

    pub fn height(&self) -> usize {
        self.pre.height() as usize
    }

    pub fn width(&self) -> usize {
        self.pre.width() as usize
    }
}

/// `(height, width)` of an RGB raster.
pub fn dims(img: &RgbImage) -> (usize, usize) {
    (img.height() as usize, img.width() as usize)
}

/// Crop the pixels covered by `window` (half-open, rounded). Empty windows
/// yield a 1x1 crop at the clamped origin so callers never see a 0-sized
/// raster.
pub fn crop_box(img: &RgbImage, window: &BoundingBox) -> RgbImage {
    let (h, w) = dims(img);
    let (x0, mut x1) = pixel_span(window.x, window.w, w);
    let (y0, mut y1) = pixel_span(window.y, window.h, h);
    let x0 = x0.min(w - 1);
    let y0 = y0.min(h - 1);
    x1 = x1.max(x0 + 1);
    y1 = y1.max(y0 + 1);
    imageops::crop_imm(img, x0 as u32, y0 as u32, (x1 - x0) as u32, (y1 - y0) as u32).to_image()
}

pub fn crop_patch(img: &RgbImage, patch: &PatchRect) -> RgbImage {
    imageops::crop_imm(img, patch.x as u32, patch.y as u32, patch.side_w as u32, patch.side_h as u32).to_image()
}

/// Bilinear resample to `height x width`. Identity when already that size.
pub fn resize_bilinear(img: &RgbImage, height: usize, width: usize) -> RgbImage {
    if dims(img) == (height, width) {
        return img.clone();
    }
    imageops::resize(img, width as u32, height as u32, imageops::FilterType::Triangle)
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

/// Decode a PNG into 3-channel RGB; grayscale and alpha inputs are expanded
/// or dropped.
pub fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    Ok(image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgb8())
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes)
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    let bytes = encode_png(img)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
