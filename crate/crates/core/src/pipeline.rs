//! Baseline localize/classify/compose flow, pseudo-label generation over
//! many scenes, and per-class confidence selection.

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::geometry::{ScoredProposal, BoundingBox};
use crate::inference::{Backends, DetectionRequest, ScoreRequest, Scorer, SegmentationRequest, Segmenter, BoxSegmenter};
use crate::config::SegmenterChoice;
use crate::mask::{compose_eval_mask, merge_max, BinaryMask, EvalMask};
use crate::proposals::{clip_bps_pipeline, generate_building_proposals, ProvenanceRecord, StageCounts, BUILDING_PROMPT};
use crate::raster::{crop_box, dims, ImagePair};
use crate::scoring::{classify_damage, ensemble_score, softmax_normalize, ScoreBreakdown};

fn scene_err(scene_id: &str, e: Error) -> Error {
    match e {
        Error::Backend { context, source } => Error::Backend { context: format!("scene {scene_id}: {context}"), source },
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    pub boxes: Vec<ScoredProposal>,
    /// One mask per box, same order.
    pub masks: Vec<BinaryMask>,
    pub building_mask: BinaryMask,
}

/// Single full-frame detector call on the pre-event image, one
/// segmentation per box, masks max-merged.
pub fn localize_buildings(pre: &RgbImage, backends: &Backends, config: &PipelineConfig) -> Result<Localization> {
    let (h, w) = dims(pre);
    let req = DetectionRequest { image: pre, text_prompt: BUILDING_PROMPT, box_threshold: config.sigma_g };
    let resp = backends.detector.detect(&req).map_err(|e| Error::backend("localization detect", e))?;
    resp.validate(&req).map_err(|e| Error::backend("localization detect", e))?;
    let boxes = resp
        .detections
        .iter()
        .enumerate()
        .map(|(i, d)| ScoredProposal::new(d.bbox, d.logit, 1.0, i))
        .collect::<Result<Vec<_>>>()?;

    let segmenter: &dyn Segmenter = match config.segmenter {
        SegmenterChoice::Model => backends.segmenter.as_ref(),
        SegmenterChoice::Box => &BoxSegmenter,
    };
    let masks = boxes
        .par_iter()
        .map(|b| {
            let req = SegmentationRequest { image: pre, prompt: b.bbox };
            let resp = segmenter
                .segment(&req)
                .map_err(|e| Error::backend(format!("segment box {:?}", b.bbox), e))?;
            resp.validate(&req)
                .map_err(|e| Error::backend(format!("segment box {:?}", b.bbox), e))?;
            Ok(resp.mask)
        })
        .collect::<Result<Vec<_>>>()?;
    let building_mask = merge_max(&masks, h, w)?;
    Ok(Localization { boxes, masks, building_mask })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedBuilding {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub label: u8,
    pub score: ScoreBreakdown,
}

fn probabilities(scorer: &dyn Scorer, patch: &RgbImage, prompts: &[String]) -> Result<Vec<f64>> {
    let req = ScoreRequest { image: patch, prompts };
    let resp = scorer.score_prompts(&req).map_err(|e| Error::backend("damage scoring", e))?;
    resp.validate(&req).map_err(|e| Error::backend("damage scoring", e))?;
    softmax_normalize(&resp.logits)
}

/// Score one box: the same padded window is cut from both epochs.
pub fn classify_box(pair: &ImagePair, bbox: &BoundingBox, scorer: &dyn Scorer, config: &PipelineConfig) -> Result<ClassifiedBuilding> {
    let window = config.padding().window(bbox, pair.height(), pair.width());
    let pre = crop_box(&pair.pre, &window);
    let post = crop_box(&pair.post, &window);
    let p = &config.prompts;
    let pre_pos = probabilities(scorer, &pre, &p.positive)?;
    let post_pos = probabilities(scorer, &post, &p.positive)?;
    let post_neg = probabilities(scorer, &post, &p.negative)?;
    let score = ensemble_score(&pre_pos, &post_pos, &post_neg, config.epsilon, config.weights)?;
    Ok(ClassifiedBuilding { bbox: *bbox, label: classify_damage(score.s, config.sigma_tilde), score })
}

pub fn classify_buildings(
    pair: &ImagePair,
    boxes: &[BoundingBox],
    scorer: &dyn Scorer,
    config: &PipelineConfig,
) -> Result<Vec<ClassifiedBuilding>> {
    boxes
        .par_iter()
        .map(|b| classify_box(pair, b, scorer, config))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| scene_err(&pair.scene_id, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneAssessment {
    pub localization: Localization,
    pub buildings: Vec<ClassifiedBuilding>,
    pub eval_mask: EvalMask,
}

/// Localize, classify, then paint each building mask with its label and
/// max-merge, so damaged wins where footprints overlap.
pub fn run_end_to_end(pair: &ImagePair, backends: &Backends, config: &PipelineConfig) -> Result<SceneAssessment> {
    let localization = localize_buildings(&pair.pre, backends, config).map_err(|e| scene_err(&pair.scene_id, e))?;
    let boxes: Vec<BoundingBox> = localization.boxes.iter().map(|b| b.bbox).collect();
    let buildings = classify_buildings(pair, &boxes, backends.scorer.as_ref(), config)?;
    let painted = localization
        .masks
        .iter()
        .zip(&buildings)
        .map(|(m, b)| compose_eval_mask(m, b.label))
        .collect::<Result<Vec<_>>>()?;
    let eval_mask = merge_max(&painted, pair.height(), pair.width())?;
    Ok(SceneAssessment { localization, buildings, eval_mask })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenePseudoLabels {
    pub scene_id: String,
    pub height: usize,
    pub width: usize,
    pub kept: Vec<ScoredProposal>,
    pub counts: StageCounts,
    pub provenance: Vec<ProvenanceRecord>,
}

/// Proposal generation and selection for one pre-event image.
pub fn pseudo_label_scene(scene_id: &str, pre: &RgbImage, backends: &Backends, config: &PipelineConfig) -> Result<ScenePseudoLabels> {
    let run = || {
        let proposals = generate_building_proposals(pre, &config.scales, backends.detector.as_ref(), &config.filter)?;
        clip_bps_pipeline(pre, &proposals, backends.scorer.as_ref(), &config.filter_prompts, &config.filter, config.padding())
    };
    let outcome = run().map_err(|e| scene_err(scene_id, e))?;
    let (height, width) = dims(pre);
    Ok(ScenePseudoLabels {
        scene_id: scene_id.to_string(),
        height,
        width,
        kept: outcome.kept,
        counts: outcome.counts,
        provenance: outcome.provenance,
    })
}

/// Pseudo-labels for every scene, in input order. `load` supplies the
/// pre-event raster of a scene. All scenes are attempted; if any fails the
/// whole run fails with the first failure in input order.
pub fn generate_pseudo_labels<F>(scene_ids: &[String], load: F, backends: &Backends, config: &PipelineConfig) -> Result<Vec<ScenePseudoLabels>>
where
    F: Fn(&str) -> Result<RgbImage> + Sync,
{
    let results: Vec<Result<ScenePseudoLabels>> = scene_ids
        .par_iter()
        .map(|id| load(id).and_then(|pre| pseudo_label_scene(id, &pre, backends, config)))
        .collect();
    let failed: Vec<&str> = scene_ids
        .iter()
        .zip(&results)
        .filter(|(_, r)| r.is_err())
        .map(|(id, _)| id.as_str())
        .collect();
    if !failed.is_empty() {
        log::error!("{} of {} scenes failed: {}", failed.len(), scene_ids.len(), failed.join(", "));
    }
    results.into_iter().collect()
}

/// A classified building with its scene identity, as read and written by
/// the selection step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedRecord {
    pub scene_id: String,
    /// Position of the box within its scene.
    pub index: usize,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub label: u8,
    pub s: f64,
}

/// Per class, keep the `ceil(fraction * n)` records farthest from the
/// decision threshold. Ties go to the smaller scene id, then box index.
/// Output lists undamaged selections first, then damaged.
pub fn select_top_confident(records: &[ClassifiedRecord], fraction: f64, sigma_tilde: f64) -> Result<Vec<ClassifiedRecord>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction {fraction} outside (0,1]")));
    }
    let mut out = Vec::new();
    for label in [crate::scoring::LABEL_UNDAMAGED, crate::scoring::LABEL_DAMAGED] {
        let mut class: Vec<&ClassifiedRecord> = records.iter().filter(|r| r.label == label).collect();
        if class.is_empty() {
            continue;
        }
        class.sort_by(|a, b| {
            let ca = (a.s - sigma_tilde).abs();
            let cb = (b.s - sigma_tilde).abs();
            cb.total_cmp(&ca)
                .then_with(|| a.scene_id.cmp(&b.scene_id))
                .then_with(|| a.index.cmp(&b.index))
        });
        let quota = ((fraction * class.len() as f64) - 1e-9).ceil().max(1.0) as usize;
        out.extend(class.into_iter().take(quota).cloned());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(scene: &str, index: usize, label: u8, s: f64) -> ClassifiedRecord {
        ClassifiedRecord { scene_id: scene.into(), index, bbox: BoundingBox { x: 0.0, y: 0.0, h: 1.0, w: 1.0 }, label, s }
    }

    #[test]
    fn selection_quota_per_class() {
        let mut v = Vec::new();
        for i in 0..10 {
            v.push(rec("a", i, 1, 0.1 * i as f64));
            v.push(rec("a", 10 + i, 2, -0.1 * i as f64));
        }
        let sel = select_top_confident(&v, 0.1, 0.0).unwrap();
        assert_eq!(sel.len(), 2);
        assert_eq!((sel[0].label, sel[0].index), (1, 9));
        assert_eq!((sel[1].label, sel[1].index), (2, 19));
        assert_eq!(select_top_confident(&v, 1.0, 0.0).unwrap().len(), 20);
        assert!(select_top_confident(&v, 0.0, 0.0).is_err());
    }

    #[test]
    fn selection_tie_break() {
        let v = vec![rec("b", 0, 1, 0.5), rec("a", 3, 1, 0.5), rec("a", 1, 1, -0.5 + 1.0)];
        let sel = select_top_confident(&v, 0.5, 0.0).unwrap();
        assert_eq!(sel.len(), 2);
        assert_eq!((sel[0].scene_id.as_str(), sel[0].index), ("a", 1));
        assert_eq!((sel[1].scene_id.as_str(), sel[1].index), ("a", 3));
    }

    #[test]
    fn selection_empty_class() {
        let v = vec![rec("a", 0, 2, -1.0)];
        let sel = select_top_confident(&v, 0.1, 0.0).unwrap();
        assert_eq!(sel.len(), 1);
        assert!(select_top_confident(&[], 0.1, 0.0).unwrap().is_empty());
    }
}
