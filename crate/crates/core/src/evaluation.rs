//! Pixel-wise F1/IoU, object-wise precision/recall and COCO-style average
//! precision.
//!
//! A class with no true positives, false positives or false negatives
//! scores 1.0. Reports name that convention in `empty_classes`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::mask::{DamageLevelMask, EvalMask, Mask};

pub const CLASS_NAMES: [&str; 3] = ["B", "U", "D"];

/// No-damage (1) stays 1; minor, major and destroyed (2..=4) become 2.
pub fn remap_gt_classes(raw: &DamageLevelMask) -> EvalMask {
    let data = raw.as_slice().iter().map(|&v| v.min(2)).collect();
    Mask::from_vec(raw.height(), raw.width(), data).expect("values clamped to 2")
}

/// Same as [`remap_gt_classes`] on raw bytes; values above 4 are rejected.
pub fn remap_gt_values(height: usize, width: usize, raw: Vec<u8>) -> Result<EvalMask> {
    let levels = DamageLevelMask::from_vec(height, width, raw)?;
    Ok(remap_gt_classes(&levels))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: [u64; 3],
    pub fp: [u64; 3],
    #[serde(rename = "fn")]
    pub fn_: [u64; 3],
    pub pixels: u64,
}

impl ConfusionCounts {
    pub fn from_masks(pred: &EvalMask, gt: &EvalMask) -> Result<Self> {
        if pred.dims() != gt.dims() {
            return Err(Error::DimensionMismatch { expected: gt.dims(), actual: pred.dims() });
        }
        let mut c = Self::default();
        for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
            if p == g {
                c.tp[p as usize] += 1;
            } else {
                c.fp[p as usize] += 1;
                c.fn_[g as usize] += 1;
            }
        }
        c.pixels = pred.as_slice().len() as u64;
        Ok(c)
    }

    pub fn add(&mut self, other: &Self) {
        for k in 0..3 {
            self.tp[k] += other.tp[k];
            self.fp[k] += other.fp[k];
            self.fn_[k] += other.fn_[k];
        }
        self.pixels += other.pixels;
    }

    pub fn report(&self) -> ClassReport {
        let mut f1 = [0.0; 3];
        let mut iou = [0.0; 3];
        let mut empty = Vec::new();
        for k in 0..3 {
            let (f, i) = f1_iou(self.tp[k], self.fp[k], self.fn_[k]);
            if self.tp[k] + self.fp[k] + self.fn_[k] == 0 {
                empty.push(CLASS_NAMES[k].to_string());
            }
            f1[k] = f;
            iou[k] = i;
        }
        ClassReport {
            f1,
            iou,
            mf1: f1.iter().sum::<f64>() / 3.0,
            miou: iou.iter().sum::<f64>() / 3.0,
            empty_classes: empty,
        }
    }
}

fn f1_iou(tp: u64, fp: u64, fn_: u64) -> (f64, f64) {
    if tp + fp + fn_ == 0 {
        return (1.0, 1.0);
    }
    let (tp, fp, fn_) = (tp as f64, fp as f64, fn_ as f64);
    (2.0 * tp / (2.0 * tp + fp + fn_), tp / (tp + fp + fn_))
}

/// Per-class scores indexed background, undamaged, damaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub f1: [f64; 3],
    pub iou: [f64; 3],
    pub mf1: f64,
    pub miou: f64,
    pub empty_classes: Vec<String>,
}

pub fn pixel_scores(pred: &EvalMask, gt: &EvalMask) -> Result<ClassReport> {
    Ok(ConfusionCounts::from_masks(pred, gt)?.report())
}

/// Building-present counts: any nonzero label is a building pixel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl BinaryCounts {
    pub fn from_masks<const A: u8, const B: u8>(pred: &Mask<A>, gt: &Mask<B>) -> Result<Self> {
        if pred.dims() != gt.dims() {
            return Err(Error::DimensionMismatch { expected: gt.dims(), actual: pred.dims() });
        }
        let mut c = Self::default();
        for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
            match (p != 0, g != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
        Ok(c)
    }

    pub fn add(&mut self, other: &Self) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn f1_iou(&self) -> (f64, f64) {
        f1_iou(self.tp, self.fp, self.fn_)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectPrf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predictions: usize,
    pub ground_truth: usize,
}

impl ObjectPrf {
    pub fn from_counts(tp: usize, n_pred: usize, n_gt: usize) -> Self {
        let (precision, recall) = if n_pred == 0 && n_gt == 0 {
            (1.0, 1.0)
        } else {
            let p = if n_pred == 0 { 0.0 } else { tp as f64 / n_pred as f64 };
            let r = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
            (p, r)
        };
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Self { precision, recall, f1, true_positives: tp, predictions: n_pred, ground_truth: n_gt }
    }
}

/// Prediction indices in matching order: score descending, input order
/// among equal scores.
pub fn score_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Greedy one-to-one matching. Entry `i` is the gt matched to prediction
/// `i`, if any. Among unmatched gts with IoU >= `thr` the highest IoU wins,
/// the lower index on ties.
pub fn greedy_match(pred: &[(BoundingBox, f64)], gt: &[BoundingBox], thr: f64) -> Vec<Option<usize>> {
    let scores: Vec<f64> = pred.iter().map(|p| p.1).collect();
    let mut taken = vec![false; gt.len()];
    let mut out = vec![None; pred.len()];
    for i in score_order(&scores) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gb) in gt.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let v = iou(&pred[i].0, gb);
            if v >= thr && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            out[i] = Some(g);
        }
    }
    out
}

pub fn object_prf(pred: &[(BoundingBox, f64)], gt: &[BoundingBox], iou_thr: f64) -> ObjectPrf {
    let tp = greedy_match(pred, gt, iou_thr).iter().filter(|m| m.is_some()).count();
    ObjectPrf::from_counts(tp, pred.len(), gt.len())
}

/// Detections and ground truth of one image.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageDetections {
    pub predictions: Vec<(BoundingBox, f64)>,
    pub ground_truth: Vec<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApParams {
    pub iou_thresholds: Vec<f64>,
    /// Upper area bounds of the small and medium bands.
    pub small_max_area: f64,
    pub medium_max_area: f64,
    pub max_detections: usize,
}

impl Default for ApParams {
    fn default() -> Self {
        Self {
            iou_thresholds: (0..10).map(|i| 0.5 + 0.05 * f64::from(i)).collect(),
            small_max_area: 32.0 * 32.0,
            medium_max_area: 96.0 * 96.0,
            max_detections: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AreaBand {
    pub min: f64,
    pub max: f64,
}

impl AreaBand {
    pub const ALL: AreaBand = AreaBand { min: 0.0, max: f64::INFINITY };

    pub fn contains(&self, area: f64) -> bool {
        area >= self.min && area < self.max
    }
}

/// Detection AP summary. Band APs are `None` when the band has no ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    #[serde(rename = "AP")]
    pub ap: f64,
    #[serde(rename = "AP_50")]
    pub ap50: f64,
    #[serde(rename = "AP_75")]
    pub ap75: f64,
    #[serde(rename = "AP_small")]
    pub ap_small: Option<f64>,
    #[serde(rename = "AP_med")]
    pub ap_medium: Option<f64>,
    #[serde(rename = "AP_large")]
    pub ap_large: Option<f64>,
    /// Set when there is no ground truth at all; AP values are then 0.
    pub no_ground_truth: bool,
}

struct Scored {
    score: f64,
    image: usize,
    rank: usize,
    tp: bool,
}

/// AP at one IoU threshold and area band; `None` without gt in the band.
pub fn ap_at(images: &[ImageDetections], thr: f64, band: AreaBand, max_detections: usize) -> Option<f64> {
    let mut dets = Vec::new();
    let mut n_gt = 0usize;
    for (img_idx, img) in images.iter().enumerate() {
        let ignore: Vec<bool> = img.ground_truth.iter().map(|g| !band.contains(g.area())).collect();
        n_gt += ignore.iter().filter(|i| !**i).count();
        // non-ignored gts are tried first
        let mut gt_order: Vec<usize> = (0..img.ground_truth.len()).collect();
        gt_order.sort_by_key(|&g| ignore[g]);
        let scores: Vec<f64> = img.predictions.iter().map(|p| p.1).collect();
        let mut taken = vec![false; img.ground_truth.len()];
        for (rank, d) in score_order(&scores).into_iter().take(max_detections).enumerate() {
            let (pb, score) = img.predictions[d];
            let mut best: Option<(usize, f64)> = None;
            for &g in &gt_order {
                if taken[g] {
                    continue;
                }
                if let Some((m, _)) = best {
                    if !ignore[m] && ignore[g] {
                        break;
                    }
                }
                let v = iou(&pb, &img.ground_truth[g]);
                if v >= thr && best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            let (tp, ignored) = match best {
                Some((g, _)) => {
                    taken[g] = true;
                    (!ignore[g], ignore[g])
                }
                None => (false, !band.contains(pb.area())),
            };
            if !ignored {
                dets.push(Scored { score, image: img_idx, rank, tp });
            }
        }
    }
    if n_gt == 0 {
        return None;
    }
    dets.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.image.cmp(&b.image)).then(a.rank.cmp(&b.rank)));
    let mut precision = Vec::with_capacity(dets.len());
    let mut recall = Vec::with_capacity(dets.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for d in &dets {
        if d.tp {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let total: f64 = (0..=100)
        .map(|k| {
            let r = f64::from(k) / 100.0;
            let idx = recall.partition_point(|&x| x < r);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .sum();
    Some(total / 101.0)
}

pub fn average_precision(images: &[ImageDetections], params: &ApParams) -> ApReport {
    let mean_over = |band: AreaBand| -> Option<f64> {
        let v: Vec<f64> = params
            .iou_thresholds
            .iter()
            .filter_map(|&t| ap_at(images, t, band, params.max_detections))
            .collect();
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    };
    let all = mean_over(AreaBand::ALL);
    let at = |t: f64| ap_at(images, t, AreaBand::ALL, params.max_detections).unwrap_or(0.0);
    ApReport {
        ap: all.unwrap_or(0.0),
        ap50: at(0.5),
        ap75: at(0.75),
        ap_small: mean_over(AreaBand { min: 0.0, max: params.small_max_area }),
        ap_medium: mean_over(AreaBand { min: params.small_max_area, max: params.medium_max_area }),
        ap_large: mean_over(AreaBand { min: params.medium_max_area, max: f64::INFINITY }),
        no_ground_truth: all.is_none(),
    }
}

/// 4-connected regions of equal nonzero label, as boxes with their label,
/// in raster order of first pixel.
pub fn instance_boxes<const MAX: u8>(mask: &Mask<MAX>) -> Vec<(BoundingBox, u8)> {
    let (h, w) = mask.dims();
    let data = mask.as_slice();
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        let label = data[start];
        if label == 0 || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / w, i % w);
            x0 = x0.min(c);
            x1 = x1.max(c);
            y0 = y0.min(r);
            y1 = y1.max(r);
            let mut visit = |j: usize| {
                if !seen[j] && data[j] == label {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
        }
        let bbox = BoundingBox { x: x0 as f64, y: y0 as f64, h: (y1 - y0 + 1) as f64, w: (x1 - x0 + 1) as f64 };
        out.push((bbox, label));
    }
    out
}

/// Pixel metrics over a set of scenes. Micro sums the confusion counts;
/// macro averages the per-scene scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelColumns {
    #[serde(rename = "F1_B")]
    pub f1_b: f64,
    #[serde(rename = "IoU_B")]
    pub iou_b: f64,
    #[serde(rename = "F1_U")]
    pub f1_u: f64,
    #[serde(rename = "IoU_U")]
    pub iou_u: f64,
    #[serde(rename = "F1_D")]
    pub f1_d: f64,
    #[serde(rename = "IoU_D")]
    pub iou_d: f64,
    #[serde(rename = "mF1")]
    pub mf1: f64,
    #[serde(rename = "mIoU")]
    pub miou: f64,
    /// Building-present localization scores.
    #[serde(rename = "F1")]
    pub f1_building: f64,
    #[serde(rename = "IoU")]
    pub iou_building: f64,
}

impl PixelColumns {
    fn from_parts(r: &ClassReport, building: (f64, f64)) -> Self {
        Self {
            f1_b: r.f1[0],
            iou_b: r.iou[0],
            f1_u: r.f1[1],
            iou_u: r.iou[1],
            f1_d: r.f1[2],
            iou_d: r.iou[2],
            mf1: r.mf1,
            miou: r.miou,
            f1_building: building.0,
            iou_building: building.1,
        }
    }

    fn mean(rows: &[PixelColumns]) -> Self {
        let n = rows.len().max(1) as f64;
        let avg = |f: fn(&PixelColumns) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Self {
            f1_b: avg(|r| r.f1_b),
            iou_b: avg(|r| r.iou_b),
            f1_u: avg(|r| r.f1_u),
            iou_u: avg(|r| r.iou_u),
            f1_d: avg(|r| r.f1_d),
            iou_d: avg(|r| r.iou_d),
            mf1: avg(|r| r.mf1),
            miou: avg(|r| r.miou),
            f1_building: avg(|r| r.f1_building),
            iou_building: avg(|r| r.iou_building),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneScores {
    pub scene_id: String,
    pub counts: ConfusionCounts,
    pub building: BinaryCounts,
    pub scores: PixelColumns,
    pub empty_classes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelReport {
    pub scenes: usize,
    pub micro: PixelColumns,
    #[serde(rename = "macro")]
    pub macro_: PixelColumns,
    pub counts: ConfusionCounts,
    /// Classes with no pixels in either mask over the whole set; they score
    /// 1.0.
    pub empty_classes: Vec<String>,
    pub per_scene: Vec<SceneScores>,
}

pub fn scene_scores(scene_id: &str, pred: &EvalMask, gt: &EvalMask) -> Result<SceneScores> {
    let counts = ConfusionCounts::from_masks(pred, gt)?;
    let building = BinaryCounts::from_masks(pred, gt)?;
    let report = counts.report();
    Ok(SceneScores {
        scene_id: scene_id.to_string(),
        counts,
        building,
        scores: PixelColumns::from_parts(&report, building.f1_iou()),
        empty_classes: report.empty_classes,
    })
}

pub fn pixel_report(per_scene: Vec<SceneScores>) -> PixelReport {
    let mut counts = ConfusionCounts::default();
    let mut building = BinaryCounts::default();
    for s in &per_scene {
        counts.add(&s.counts);
        building.add(&s.building);
    }
    let report = counts.report();
    let rows: Vec<PixelColumns> = per_scene.iter().map(|s| s.scores.clone()).collect();
    PixelReport {
        scenes: per_scene.len(),
        micro: PixelColumns::from_parts(&report, building.f1_iou()),
        macro_: PixelColumns::mean(&rows),
        counts,
        empty_classes: report.empty_classes,
        per_scene,
    }
}

/// Object-level summary: detection AP, box P/R/F1 at IoU 0.5, and the
/// damage-label accuracy over matched boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectReport {
    #[serde(flatten)]
    pub ap: ApReport,
    pub iou_threshold: f64,
    pub precision: f64,
    pub recall: f64,
    #[serde(rename = "F1")]
    pub f1: f64,
    pub matched: usize,
    pub label_correct: usize,
    pub damage_accuracy: f64,
}

/// Predicted and ground-truth objects of one scene with damage labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledObjects {
    pub predictions: Vec<(BoundingBox, f64, u8)>,
    pub ground_truth: Vec<(BoundingBox, u8)>,
}

pub fn object_report(scenes: &[LabeledObjects], iou_thr: f64) -> ObjectReport {
    let images: Vec<ImageDetections> = scenes
        .iter()
        .map(|s| ImageDetections {
            predictions: s.predictions.iter().map(|p| (p.0, p.1)).collect(),
            ground_truth: s.ground_truth.iter().map(|g| g.0).collect(),
        })
        .collect();
    let ap = average_precision(&images, &ApParams::default());
    let (mut tp, mut n_pred, mut n_gt, mut correct) = (0, 0, 0, 0);
    for (s, img) in scenes.iter().zip(&images) {
        let m = greedy_match(&img.predictions, &img.ground_truth, iou_thr);
        for (i, g) in m.iter().enumerate() {
            if let Some(g) = g {
                tp += 1;
                if s.predictions[i].2 == s.ground_truth[*g].1 {
                    correct += 1;
                }
            }
        }
        n_pred += img.predictions.len();
        n_gt += img.ground_truth.len();
    }
    let prf = ObjectPrf::from_counts(tp, n_pred, n_gt);
    ObjectReport {
        ap,
        iou_threshold: iou_thr,
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        matched: tp,
        label_correct: correct,
        damage_accuracy: if tp == 0 { 0.0 } else { correct as f64 / tp as f64 },
    }
}
