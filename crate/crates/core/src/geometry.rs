//! Axis-aligned boxes, IoU, greedy NMS and the multiscale sliding-window grid.
//!
//! All coordinates are pixels in floating point, relative to the original
//! image. Boxes use `(x, y, h, w)` ordering: left, top, height, width.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub h: f64,
    pub w: f64,
}

impl BoundingBox {
    /// Validated constructor. Zero-area, negative-origin and non-finite boxes
    /// are rejected.
    pub fn new(x: f64, y: f64, h: f64, w: f64) -> Result<Self> {
        let b = Self { x, y, h, w };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x, self.y, self.h, self.w].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput(format!("non-finite box {self:?}")));
        }
        if self.h <= 0.0 || self.w <= 0.0 {
            return Err(Error::InvalidInput(format!("degenerate box {self:?}")));
        }
        if self.x < 0.0 || self.y < 0.0 {
            return Err(Error::InvalidInput(format!("box origin outside image {self:?}")));
        }
        Ok(())
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.h * self.w
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let iw = (self.right().min(other.right()) - self.x.max(other.x)).max(0.0);
        let ih = (self.bottom().min(other.bottom()) - self.y.max(other.y)).max(0.0);
        iw * ih
    }

    /// Clamp to `[0, width) x [0, height)`. Returns `None` when nothing of the
    /// box remains inside the frame.
    pub fn clamp_to(&self, height: f64, width: f64) -> Option<BoundingBox> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = self.right().min(width);
        let y1 = self.bottom().min(height);
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some(BoundingBox { x: x0, y: y0, h: y1 - y0, w: x1 - x0 })
    }

    /// True when the box lies within a `height x width` frame (with a small
    /// tolerance for float round-off).
    pub fn fits_within(&self, height: f64, width: f64) -> bool {
        const TOL: f64 = 1e-6;
        self.x >= -TOL && self.y >= -TOL && self.right() <= width + TOL && self.bottom() <= height + TOL
    }
}

/// Intersection over union. Zero when the boxes are disjoint.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// A detector box with its confidence and the scale/patch it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredProposal {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub logit: f64,
    pub scale: f64,
    pub patch_index: usize,
}

impl ScoredProposal {
    pub fn new(bbox: BoundingBox, logit: f64, scale: f64, patch_index: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&logit) {
            return Err(Error::InvalidInput(format!("logit {logit} outside [0,1]")));
        }
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(Error::InvalidInput(format!("scale {scale} outside (0,1]")));
        }
        Ok(Self { bbox, logit, scale, patch_index })
    }
}

/// Ranking used by NMS: descending logit, then smaller patch index, then
/// lexicographic `(x, y)`.
pub fn nms_order(a: &ScoredProposal, b: &ScoredProposal) -> Ordering {
    b.logit
        .total_cmp(&a.logit)
        .then(a.patch_index.cmp(&b.patch_index))
        .then(a.bbox.x.total_cmp(&b.bbox.x))
        .then(a.bbox.y.total_cmp(&b.bbox.y))
}

/// Greedy non-maximum suppression. A proposal survives iff its IoU with every
/// previously kept proposal is `<= iou_threshold`. Output is in ranking order.
pub fn nms_filter(proposals: &[ScoredProposal], iou_threshold: f64) -> Vec<ScoredProposal> {
    let mut ranked: Vec<ScoredProposal> = proposals.to_vec();
    ranked.sort_by(nms_order);
    let mut kept: Vec<ScoredProposal> = Vec::with_capacity(ranked.len());
    for p in ranked {
        if kept.iter().all(|k| iou(&k.bbox, &p.bbox) <= iou_threshold) {
            kept.push(p);
        }
    }
    kept
}

/// One sliding-window patch in original-image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchRect {
    pub x: usize,
    pub y: usize,
    pub side_h: usize,
    pub side_w: usize,
    pub scale: f64,
}

impl PatchRect {
    pub fn as_box(&self) -> BoundingBox {
        BoundingBox {
            x: self.x as f64,
            y: self.y as f64,
            h: self.side_h as f64,
            w: self.side_w as f64,
        }
    }
}

pub fn validate_scale(scale: f64) -> Result<()> {
    if scale.is_finite() && scale > 0.0 && scale <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("scale {scale} outside (0,1]")))
    }
}

/// Patches per axis at scale `scale`: `ceil(2/scale - 1)`.
pub fn patches_per_axis(scale: f64) -> usize {
    // guard against 2/0.5 - 1 = 3.0000000000000004 style round-off
    let n = (2.0 / scale - 1.0 - 1e-9).ceil();
    n.max(1.0) as usize
}

fn axis_origins(extent: usize, side: usize, count: usize) -> Vec<usize> {
    let last = extent - side;
    if count == 1 {
        return vec![0];
    }
    // Evenly spaced between 0 and the far edge. With an exact side this is a
    // half-side stride; after rounding it still leaves no gaps.
    (0..count)
        .map(|i| ((i as f64 * last as f64 / (count - 1) as f64).round() as usize).min(last))
        .collect()
}

/// The overlapping patch grid for every requested scale, scale by scale in
/// the given order, row-major within a scale. Origins are evenly spaced
/// from 0 to the far edge, which is a half-side stride when the side is
/// exact.
pub fn build_tile_grid(height: usize, width: usize, scales: &[f64]) -> Result<Vec<PatchRect>> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidInput("empty image".into()));
    }
    let mut out = Vec::new();
    for &scale in scales {
        validate_scale(scale)?;
        let side_h = ((scale * height as f64).round() as usize).clamp(1, height);
        let side_w = ((scale * width as f64).round() as usize).clamp(1, width);
        let n = patches_per_axis(scale);
        let ys = axis_origins(height, side_h, n);
        let xs = axis_origins(width, side_w, n);
        for &y in &ys {
            for &x in &xs {
                out.push(PatchRect { x, y, side_h, side_w, scale });
            }
        }
    }
    Ok(out)
}

/// Per-axis ratio between the upsampled request frame and the patch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Upsample {
    pub x: f64,
    pub y: f64,
}

impl Upsample {
    pub fn uniform(factor: f64) -> Self {
        Self { x: factor, y: factor }
    }

    /// Factor that maps `patch` onto a `height x width` frame.
    pub fn to_frame(patch: &PatchRect, height: usize, width: usize) -> Self {
        Self {
            x: width as f64 / patch.side_w as f64,
            y: height as f64 / patch.side_h as f64,
        }
    }
}

/// Map a box predicted on an upsampled patch back to original-image
/// coordinates, clamped to the `image_h x image_w` frame.
pub fn remap_to_image(
    box_in_patch: &BoundingBox,
    patch: &PatchRect,
    upsample: Upsample,
    image_h: usize,
    image_w: usize,
) -> Result<BoundingBox> {
    let frame_h = patch.side_h as f64 * upsample.y;
    let frame_w = patch.side_w as f64 * upsample.x;
    if !box_in_patch.fits_within(frame_h, frame_w) {
        return Err(Error::InvalidInput(format!(
            "box {box_in_patch:?} outside {frame_h}x{frame_w} patch frame"
        )));
    }
    let mapped = BoundingBox {
        x: box_in_patch.x / upsample.x + patch.x as f64,
        y: box_in_patch.y / upsample.y + patch.y as f64,
        h: box_in_patch.h / upsample.y,
        w: box_in_patch.w / upsample.x,
    };
    mapped
        .clamp_to(image_h as f64, image_w as f64)
        .ok_or_else(|| Error::InvalidInput(format!("box {mapped:?} falls outside the image")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x: f64, y: f64, h: f64, w: f64) -> BoundingBox {
        BoundingBox::new(x, y, h, w).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(20.0, 20.0, 5.0, 5.0)), 0.0);
        let v = iou(&a, &bx(5.0, 5.0, 10.0, 10.0));
        assert!((v - 25.0 / 175.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 5.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 5.0, -1.0).is_err());
        assert!(BoundingBox::new(-1.0, 0.0, 5.0, 5.0).is_err());
        assert!(BoundingBox::new(f64::NAN, 0.0, 5.0, 5.0).is_err());
    }

    #[test]
    fn nms_examples() {
        assert!(nms_filter(&[], 0.1).is_empty());
        let b = bx(10.0, 10.0, 20.0, 20.0);
        let hi = ScoredProposal::new(b, 0.9, 1.0, 0).unwrap();
        let lo = ScoredProposal::new(b, 0.8, 1.0, 1).unwrap();
        let kept = nms_filter(&[lo, hi], 0.1);
        assert_eq!(kept, vec![hi]);
    }

    #[test]
    fn nms_tie_prefers_smaller_patch_index() {
        let a = ScoredProposal::new(bx(0.0, 0.0, 10.0, 10.0), 0.5, 0.5, 3).unwrap();
        let b = ScoredProposal::new(bx(1.0, 1.0, 10.0, 10.0), 0.5, 0.5, 1).unwrap();
        assert_eq!(nms_filter(&[a, b], 0.1), vec![b]);
    }

    #[test]
    fn tile_grid_counts_and_origins() {
        let full = build_tile_grid(1024, 1024, &[1.0]).unwrap();
        assert_eq!(full, vec![PatchRect { x: 0, y: 0, side_h: 1024, side_w: 1024, scale: 1.0 }]);
        assert_eq!(build_tile_grid(1024, 1024, &[1.0, 0.5]).unwrap().len(), 10);
        assert_eq!(build_tile_grid(1024, 1024, &[1.0, 0.5, 0.25]).unwrap().len(), 59);

        let half = build_tile_grid(1024, 1024, &[0.5]).unwrap();
        assert_eq!(half.len(), 9);
        let mut origins: Vec<(usize, usize)> = half.iter().map(|p| (p.x, p.y)).collect();
        origins.sort();
        let mut expected = Vec::new();
        for x in [0, 256, 512] {
            for y in [0, 256, 512] {
                expected.push((x, y));
            }
        }
        assert_eq!(origins, expected);
        assert!(half.iter().all(|p| p.side_h == 512 && p.side_w == 512));
    }

    #[test]
    fn tile_grid_rejects_bad_scales() {
        assert!(matches!(build_tile_grid(64, 64, &[0.0]), Err(Error::Config(_))));
        assert!(matches!(build_tile_grid(64, 64, &[1.5]), Err(Error::Config(_))));
        assert!(matches!(build_tile_grid(64, 64, &[-0.5]), Err(Error::Config(_))));
    }

    #[test]
    fn remap_examples() {
        let full = PatchRect { x: 0, y: 0, side_h: 1024, side_w: 1024, scale: 1.0 };
        let b = bx(10.0, 20.0, 30.0, 40.0);
        assert_eq!(remap_to_image(&b, &full, Upsample::uniform(1.0), 1024, 1024).unwrap(), b);

        let patch = PatchRect { x: 256, y: 256, side_h: 512, side_w: 512, scale: 0.5 };
        let r = remap_to_image(&bx(100.0, 100.0, 50.0, 60.0), &patch, Upsample::uniform(2.0), 1024, 1024)
            .unwrap();
        assert_eq!(r, bx(306.0, 306.0, 25.0, 30.0));
    }

    #[test]
    fn remap_clamps_overhang_and_rejects_outside() {
        // The patch origin is pinned inside the image, so overhang can only
        // come from a patch whose frame is larger than the remaining image.
        let patch = PatchRect { x: 90, y: 0, side_h: 20, side_w: 20, scale: 0.2 };
        let r = remap_to_image(&bx(0.0, 0.0, 10.0, 20.0), &patch, Upsample::uniform(1.0), 100, 100).unwrap();
        assert_eq!(r.x + r.w, 100.0);
        assert_eq!(r.w, 10.0);

        let full = PatchRect { x: 0, y: 0, side_h: 100, side_w: 100, scale: 1.0 };
        assert!(remap_to_image(&bx(90.0, 0.0, 10.0, 20.0), &full, Upsample::uniform(1.0), 100, 100).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0.0..100.0f64, 0.0..100.0f64, 0.5..60.0f64, 0.5..60.0f64)
            .prop_map(|(x, y, h, w)| BoundingBox { x, y, h, w })
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn nms_output_is_antichain(
            boxes in proptest::collection::vec((arb_box(), 0.0..1.0f64), 0..40),
            thr in 0.0..1.0f64,
        ) {
            let props: Vec<_> = boxes
                .iter()
                .enumerate()
                .map(|(i, (b, l))| ScoredProposal { bbox: *b, logit: *l, scale: 1.0, patch_index: i })
                .collect();
            let kept = nms_filter(&props, thr);
            for (i, a) in kept.iter().enumerate() {
                for b in &kept[i + 1..] {
                    prop_assert!(iou(&a.bbox, &b.bbox) <= thr);
                }
            }
            for w in kept.windows(2) {
                prop_assert!(w[0].logit >= w[1].logit);
            }
        }

        #[test]
        fn tile_grid_count_and_coverage(
            h in 4usize..300,
            w in 4usize..300,
            k in 0u32..4,
        ) {
            let scale = 1.0 / f64::from(1u32 << k);
            let grid = build_tile_grid(h, w, &[scale]).unwrap();
            let n = patches_per_axis(scale);
            prop_assert_eq!(grid.len(), n * n);
            let mut covered = vec![false; h * w];
            for p in &grid {
                prop_assert!(p.x + p.side_w <= w && p.y + p.side_h <= h);
                for yy in p.y..p.y + p.side_h {
                    for xx in p.x..p.x + p.side_w {
                        covered[yy * w + xx] = true;
                    }
                }
            }
            prop_assert!(covered.iter().all(|c| *c));
        }

        #[test]
        fn remap_inverts_patch_projection(
            px in 0usize..400, py in 0usize..400,
            bx_ in 0.0..200.0f64, by in 0.0..200.0f64,
            bh in 1.0..50.0f64, bw in 1.0..50.0f64,
            factor in prop_oneof![Just(1.0f64), Just(2.0), Just(4.0)],
        ) {
            let patch = PatchRect { x: px, y: py, side_h: 256, side_w: 256, scale: 0.25 };
            let img = 1024usize;
            let original = BoundingBox { x: px as f64 + bx_, y: py as f64 + by, h: bh, w: bw };
            let local = BoundingBox {
                x: (original.x - px as f64) * factor,
                y: (original.y - py as f64) * factor,
                h: bh * factor,
                w: bw * factor,
            };
            let back = remap_to_image(&local, &patch, Upsample::uniform(factor), img, img).unwrap();
            prop_assert!((back.x - original.x).abs() < 1e-9);
            prop_assert!((back.y - original.y).abs() < 1e-9);
            prop_assert!((back.h - original.h).abs() < 1e-9);
            prop_assert!((back.w - original.w).abs() < 1e-9);
        }
    }
}
