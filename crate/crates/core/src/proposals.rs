//! Pseudo-label factory: multiscale building proposal generation followed by
//! the selection cascade (size filters, per-scale NMS, multiscale union,
//! vision-language keep/reject).

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_tile_grid, nms_filter, remap_to_image, ScoredProposal, Upsample};
use crate::inference::{DetectionRequest, Detector, ScoreRequest, Scorer};
use crate::raster::{crop_box, crop_patch, dims, resize_bilinear};
use crate::scoring::{pad_patch_window, PatchPadding};

/// Text prompt sent to the detector for every patch.
pub const BUILDING_PROMPT: &str = "building";

/// Ordered prompt list for the keep/reject decision. Index 0 is the building
/// prompt; the rest are look-alike distractor prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FilterPromptList(pub Vec<String>);

impl Default for FilterPromptList {
    fn default() -> Self {
        Self(
            [
                "building",
                "swimming pool",
                "tennis court",
                "parking lot",
                "street",
                "trees",
                "grass",
                "soil",
                "car",
                "truck",
            ]
            .iter()
            .map(|o| format!("A satellite photo of {o}"))
            .collect(),
        )
    }
}

impl FilterPromptList {
    pub fn validate(&self) -> Result<()> {
        if self.0.len() < 2 {
            return Err(Error::Config("filter prompt list needs a building prompt and at least one distractor".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Max box height as a fraction of the patch height.
    pub sigma_h: f64,
    /// Max box width as a fraction of the patch width.
    pub sigma_w: f64,
    /// Max box area as a fraction of the patch area.
    pub sigma_a: f64,
    pub nms_iou: f64,
    /// Minimum raw building-prompt logit.
    pub z_c: f64,
    /// Detector box threshold used for proposal generation.
    pub sigma_g_prime: f64,
    /// Extra NMS over the merged multiscale set. Off keeps cross-scale
    /// duplicates, as the plain union does.
    pub post_merge_nms: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            sigma_h: 0.75,
            sigma_w: 0.75,
            sigma_a: 0.03,
            nms_iou: 0.1,
            z_c: 0.0,
            sigma_g_prime: 0.14,
            post_merge_nms: false,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma_h", self.sigma_h), ("sigma_w", self.sigma_w), ("sigma_a", self.sigma_a)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} = {v} outside (0,1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(Error::Config(format!("nms_iou = {} outside [0,1]", self.nms_iou)));
        }
        if !(0.0..=1.0).contains(&self.sigma_g_prime) {
            return Err(Error::Config(format!("sigma_g_prime = {} outside [0,1]", self.sigma_g_prime)));
        }
        if !self.z_c.is_finite() {
            return Err(Error::Config("z_c must be finite".into()));
        }
        Ok(())
    }
}

/// Proposals of one scale, in detector order, patch by patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleProposals {
    pub scale: f64,
    pub proposals: Vec<ScoredProposal>,
}

/// Query the detector on every patch of every scale. Patches are upsampled
/// to the full frame before detection and boxes mapped back to the
/// original image. Any failed patch fails the whole image.
pub fn generate_building_proposals(
    image: &RgbImage,
    scales: &[f64],
    detector: &dyn Detector,
    config: &FilterConfig,
) -> Result<Vec<ScaleProposals>> {
    let (h, w) = dims(image);
    let grid = build_tile_grid(h, w, scales)?;
    let mut first_index_of_scale = Vec::with_capacity(scales.len());
    let mut offset = 0;
    for &s in scales {
        first_index_of_scale.push(offset);
        offset += crate::geometry::patches_per_axis(s).pow(2);
    }

    let per_patch: Vec<Vec<ScoredProposal>> = grid
        .par_iter()
        .enumerate()
        .map(|(global, patch)| {
            let scale_slot = first_index_of_scale.iter().rposition(|&start| start <= global).unwrap_or(0);
            let patch_index = global - first_index_of_scale[scale_slot];
            let frame = if patch.side_h == h && patch.side_w == w {
                image.clone()
            } else {
                resize_bilinear(&crop_patch(image, patch), h, w)
            };
            let req = DetectionRequest { image: &frame, text_prompt: BUILDING_PROMPT, box_threshold: config.sigma_g_prime };
            let context = || format!("patch {patch_index} at scale {} (origin {},{})", patch.scale, patch.x, patch.y);
            let resp = detector.detect(&req).map_err(|e| Error::backend(context(), e))?;
            resp.validate(&req).map_err(|e| Error::backend(context(), e))?;
            let up = Upsample::to_frame(patch, h, w);
            resp.detections
                .iter()
                .map(|d| {
                    let bbox = remap_to_image(&d.bbox, patch, up, h, w)?;
                    ScoredProposal::new(bbox, d.logit, patch.scale, patch_index)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out: Vec<ScaleProposals> = scales.iter().map(|&scale| ScaleProposals { scale, proposals: Vec::new() }).collect();
    for (global, props) in per_patch.into_iter().enumerate() {
        let slot = first_index_of_scale.iter().rposition(|&start| start <= global).unwrap_or(0);
        out[slot].proposals.extend(props);
    }
    Ok(out)
}

/// True when the box respects all three size maxima of its scale, measured
/// against the `scale*H x scale*W` patch.
pub fn passes_size_filter(p: &ScoredProposal, scale: f64, image_h: usize, image_w: usize, config: &FilterConfig) -> bool {
    let patch_h = scale * image_h as f64;
    let patch_w = scale * image_w as f64;
    p.bbox.w <= config.sigma_w * patch_w && p.bbox.h <= config.sigma_h * patch_h && p.bbox.area() <= config.sigma_a * patch_h * patch_w
}

pub fn preliminary_filter(
    proposals: &[ScoredProposal],
    scale: f64,
    image_h: usize,
    image_w: usize,
    config: &FilterConfig,
) -> Vec<ScoredProposal> {
    proposals
        .iter()
        .filter(|p| passes_size_filter(p, scale, image_h, image_w, config))
        .copied()
        .collect()
}

/// Plain union of the per-scale survivors, scale by scale.
pub fn multiscale_merge(per_scale: &[ScaleProposals]) -> Vec<ScoredProposal> {
    per_scale.iter().flat_map(|s| s.proposals.iter().copied()).collect()
}

/// Keep iff the building logit reaches `z_c` and no other prompt scores
/// strictly higher (a tie at the maximum counts as a win for index 0).
pub fn clip_filter_decision(logits: &[f64], prompt_count: usize, z_c: f64) -> Result<bool> {
    if logits.len() != prompt_count || logits.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} logits for {prompt_count} filter prompts",
            logits.len()
        )));
    }
    let building = logits[0];
    Ok(building >= z_c && logits[1..].iter().all(|&l| l <= building))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Preliminary,
    Nms,
    PostMergeNms,
    Clip,
}

/// Fate of one input proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub proposal: ScoredProposal,
    /// `None` when the proposal survived every stage.
    pub rejected_at: Option<Stage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_logits: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleCounts {
    pub scale: f64,
    pub proposed: usize,
    pub after_preliminary: usize,
    pub after_nms: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCounts {
    pub per_scale: Vec<ScaleCounts>,
    pub merged: usize,
    pub after_post_merge: usize,
    pub kept: usize,
}

impl StageCounts {
    /// Every stage only removes boxes.
    pub fn is_monotone(&self) -> bool {
        let per_scale_ok = self
            .per_scale
            .iter()
            .all(|s| s.proposed >= s.after_preliminary && s.after_preliminary >= s.after_nms);
        let nms_total: usize = self.per_scale.iter().map(|s| s.after_nms).sum();
        per_scale_ok && nms_total == self.merged && self.merged >= self.after_post_merge && self.after_post_merge >= self.kept
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    pub kept: Vec<ScoredProposal>,
    pub provenance: Vec<ProvenanceRecord>,
    pub counts: StageCounts,
}

fn same(a: &ScoredProposal, b: &ScoredProposal) -> bool {
    a.bbox == b.bbox && a.logit == b.logit && a.scale == b.scale && a.patch_index == b.patch_index
}

/// Run the selection cascade over the proposals of one image.
pub fn clip_bps_pipeline(
    image: &RgbImage,
    per_scale: &[ScaleProposals],
    scorer: &dyn Scorer,
    prompts: &FilterPromptList,
    config: &FilterConfig,
    padding: PatchPadding,
) -> Result<SelectionOutcome> {
    prompts.validate()?;
    let (h, w) = dims(image);
    let mut provenance: Vec<ProvenanceRecord> = per_scale
        .iter()
        .flat_map(|s| s.proposals.iter())
        .map(|p| ProvenanceRecord { proposal: *p, rejected_at: None, clip_logits: None })
        .collect();
    fn mark(p: &ScoredProposal, stage: Stage, provenance: &mut [ProvenanceRecord]) {
        if let Some(r) = provenance.iter_mut().find(|r| r.rejected_at.is_none() && same(&r.proposal, p)) {
            r.rejected_at = Some(stage);
        }
    }

    let mut counts = Vec::with_capacity(per_scale.len());
    let mut survivors = Vec::with_capacity(per_scale.len());
    for s in per_scale {
        let filtered = preliminary_filter(&s.proposals, s.scale, h, w, config);
        for p in s.proposals.iter().filter(|p| !passes_size_filter(p, s.scale, h, w, config)) {
            mark(p, Stage::Preliminary, &mut provenance);
        }
        let kept = nms_filter(&filtered, config.nms_iou);
        for p in filtered.iter().filter(|p| !kept.iter().any(|k| same(k, p))) {
            mark(p, Stage::Nms, &mut provenance);
        }
        counts.push(ScaleCounts {
            scale: s.scale,
            proposed: s.proposals.len(),
            after_preliminary: filtered.len(),
            after_nms: kept.len(),
        });
        survivors.push(ScaleProposals { scale: s.scale, proposals: kept });
    }

    let merged = multiscale_merge(&survivors);
    let merged_count = merged.len();
    let candidates = if config.post_merge_nms {
        let kept = nms_filter(&merged, config.nms_iou);
        for p in merged.iter().filter(|p| !kept.iter().any(|k| same(k, p))) {
            mark(p, Stage::PostMergeNms, &mut provenance);
        }
        kept
    } else {
        merged
    };

    let decisions: Vec<(bool, Vec<f64>)> = candidates
        .par_iter()
        .map(|p| {
            let window = pad_patch_window(&p.bbox, h, w, padding.pad, padding.min_side);
            let patch = crop_box(image, &window);
            let req = ScoreRequest { image: &patch, prompts: &prompts.0 };
            let resp = scorer
                .score_prompts(&req)
                .map_err(|e| Error::backend(format!("filter scoring of box {:?}", p.bbox), e))?;
            resp.validate(&req)
                .map_err(|e| Error::backend(format!("filter scoring of box {:?}", p.bbox), e))?;
            let keep = clip_filter_decision(&resp.logits, prompts.0.len(), config.z_c)?;
            Ok((keep, resp.logits))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut kept = Vec::new();
    for (p, (keep, logits)) in candidates.iter().zip(decisions) {
        if let Some(r) = provenance.iter_mut().find(|r| r.rejected_at.is_none() && r.clip_logits.is_none() && same(&r.proposal, p)) {
            r.clip_logits = Some(logits);
            if !keep {
                r.rejected_at = Some(Stage::Clip);
            }
        }
        if keep {
            kept.push(*p);
        }
    }

    let stage_counts = StageCounts {
        per_scale: counts,
        merged: merged_count,
        after_post_merge: candidates.len(),
        kept: kept.len(),
    };
    Ok(SelectionOutcome { kept, provenance, counts: stage_counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;

    fn prop(x: f64, y: f64, h: f64, w: f64, logit: f64, scale: f64) -> ScoredProposal {
        ScoredProposal { bbox: BoundingBox { x, y, h, w }, logit, scale, patch_index: 0 }
    }

    #[test]
    fn preliminary_filter_examples() {
        let cfg = FilterConfig::default();
        let big = prop(10.0, 10.0, 200.0, 200.0, 0.9, 1.0);
        assert!(preliminary_filter(&[big], 1.0, 1024, 1024, &cfg).is_empty());
        // width and height pass on their own; the area bound rejects it
        assert!(200.0 <= cfg.sigma_w * 1024.0 && 200.0 <= cfg.sigma_h * 1024.0);
        assert!(200.0 * 200.0 > cfg.sigma_a * 1024.0 * 1024.0);

        for scale in [1.0, 0.5, 0.25, 0.125] {
            let small = prop(10.0, 10.0, 10.0, 10.0, 0.9, scale);
            assert_eq!(preliminary_filter(&[small], scale, 1024, 1024, &cfg).len(), 1);
        }
        // relative to the patch: 150x150 passes at full frame, not at 0.5
        let mid = prop(0.0, 0.0, 150.0, 150.0, 0.9, 1.0);
        assert_eq!(preliminary_filter(&[mid], 1.0, 1024, 1024, &cfg).len(), 1);
        assert!(preliminary_filter(&[mid], 0.5, 1024, 1024, &cfg).is_empty());
    }

    #[test]
    fn merge_is_plain_union() {
        let a = prop(0.0, 0.0, 10.0, 10.0, 0.9, 1.0);
        let b = prop(0.0, 0.0, 10.0, 10.0, 0.8, 0.5);
        let one = vec![ScaleProposals { scale: 1.0, proposals: vec![a] }];
        assert_eq!(multiscale_merge(&one), vec![a]);
        let two = vec![
            ScaleProposals { scale: 1.0, proposals: vec![a] },
            ScaleProposals { scale: 0.5, proposals: vec![b] },
        ];
        assert_eq!(multiscale_merge(&two), vec![a, b]);
    }

    #[test]
    fn clip_decision_examples() {
        assert!(clip_filter_decision(&[0.9, 0.3, 0.1], 3, 0.5).unwrap());
        assert!(!clip_filter_decision(&[0.6, 0.8, 0.1], 3, 0.5).unwrap());
        assert!(!clip_filter_decision(&[0.4, 0.1], 2, 0.5).unwrap());
        assert!(clip_filter_decision(&[0.7, 0.7], 2, 0.5).unwrap());
        assert!(clip_filter_decision(&[0.9, 0.1], 3, 0.5).is_err());
    }

    #[test]
    fn filter_config_validation() {
        assert!(FilterConfig::default().validate().is_ok());
        assert!(FilterConfig { sigma_a: 0.0, ..Default::default() }.validate().is_err());
        assert!(FilterConfig { nms_iou: 1.5, ..Default::default() }.validate().is_err());
        assert!(FilterPromptList(vec!["building".into()]).validate().is_err());
        assert_eq!(FilterPromptList::default().0.len(), 10);
        assert_eq!(FilterPromptList::default().0[0], "A satellite photo of building");
    }

    #[test]
    fn counts_monotonicity_check() {
        let ok = StageCounts {
            per_scale: vec![ScaleCounts { scale: 1.0, proposed: 5, after_preliminary: 4, after_nms: 3 }],
            merged: 3,
            after_post_merge: 3,
            kept: 2,
        };
        assert!(ok.is_monotone());
        let bad = StageCounts { kept: 4, ..ok };
        assert!(!bad.is_monotone());
    }
}
