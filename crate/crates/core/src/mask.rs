//! Dense label rasters: binary building masks, 3-class evaluation masks and
//! raw 5-level damage rasters, plus the max-merge and class composition
//! used to build evaluation masks.

use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// Row-major, one byte per pixel, values in `0..=MAX`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Mask<const MAX: u8> {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

/// Building / background (values 0 and 1).
pub type BinaryMask = Mask<1>;
/// Background / undamaged / damaged (values 0, 1, 2).
pub type EvalMask = Mask<2>;
/// Raw damage levels: background, no damage, minor, major, destroyed.
pub type DamageLevelMask = Mask<4>;

impl<const MAX: u8> std::fmt::Debug for Mask<MAX> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Mask")
            .field("max", &MAX)
            .field("height", &self.height)
            .field("width", &self.width)
            .field("support", &self.count_nonzero())
            .finish()
    }
}

impl<const MAX: u8> Mask<MAX> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidInput(format!(
                "mask buffer of {} bytes for {height}x{width}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > MAX) {
            return Err(Error::InvalidInput(format!("mask value {v} exceeds {MAX}")));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    /// Panics on out-of-range values; internal writers only.
    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        assert!(value <= MAX, "mask value {value} exceeds {MAX}");
        self.data[row * self.width + col] = value;
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn count_value(&self, value: u8) -> usize {
        self.data.iter().filter(|&&v| v == value).count()
    }

    pub fn support(&self) -> BinaryMask {
        Mask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| u8::from(v != 0)).collect(),
        }
    }

    fn check_dims(&self, height: usize, width: usize) -> Result<()> {
        if self.dims() != (height, width) {
            return Err(Error::DimensionMismatch { expected: (height, width), actual: self.dims() });
        }
        Ok(())
    }

    /// Single-channel PNG with the raw label values.
    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let img = GrayImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .ok_or_else(|| Error::InvalidInput("mask buffer size".into()))?;
        let mut buf = Cursor::new(Vec::new());
        img.write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    /// Decode a PNG label raster. Colour PNGs are reduced to their first
    /// channel; any value above `MAX` is an error.
    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
        let gray = match img {
            image::DynamicImage::ImageLuma8(g) => g,
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = rgb.dimensions();
                GrayImage::from_raw(w, h, rgb.pixels().map(|p| p.0[0]).collect())
                    .expect("buffer sized from dimensions")
            }
        };
        let (w, h) = gray.dimensions();
        Self::from_vec(h as usize, w as usize, gray.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.to_png_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_png_bytes(&bytes)
    }
}

impl BinaryMask {
    /// Per-pixel label product: every building pixel takes `damage_class`.
    pub fn compose_eval_mask(&self, damage_class: u8) -> Result<EvalMask> {
        compose_eval_mask(self, damage_class)
    }
}

/// Pixel-wise maximum across `masks`. An empty list gives the all-zero mask.
pub fn merge_max<const MAX: u8>(masks: &[Mask<MAX>], height: usize, width: usize) -> Result<Mask<MAX>> {
    let mut out = Mask::<MAX>::zeros(height, width);
    for m in masks {
        m.check_dims(height, width)?;
        for (o, &v) in out.data.iter_mut().zip(&m.data) {
            *o = (*o).max(v);
        }
    }
    Ok(out)
}

/// Multiply a building mask by its damage label (1 undamaged, 2 damaged).
pub fn compose_eval_mask(seg: &BinaryMask, damage_class: u8) -> Result<EvalMask> {
    if !(1..=2).contains(&damage_class) {
        return Err(Error::InvalidInput(format!(
            "damage class must be 1 or 2, got {damage_class}"
        )));
    }
    Ok(Mask {
        height: seg.height,
        width: seg.width,
        data: seg.data.iter().map(|&v| v * damage_class).collect(),
    })
}

/// Pixel span `[start, end)` covered by `[origin, origin + len)` after
/// rounding half away from zero, clipped to `0..limit`.
pub fn pixel_span(origin: f64, len: f64, limit: usize) -> (usize, usize) {
    let start = origin.round().max(0.0).min(limit as f64) as usize;
    let end = (origin + len).round().max(0.0).min(limit as f64) as usize;
    (start, end.max(start))
}

/// Filled rectangle over the half-open pixel intervals of `bbox`.
pub fn rasterize_box(bbox: &BoundingBox, height: usize, width: usize) -> BinaryMask {
    let mut mask = BinaryMask::zeros(height, width);
    let (x0, x1) = pixel_span(bbox.x, bbox.w, width);
    let (y0, y1) = pixel_span(bbox.y, bbox.h, height);
    for row in y0..y1 {
        mask.data[row * width + x0..row * width + x1].fill(1);
    }
    mask
}
