//! Bi-temporal prompt-ensemble damage scoring.
//!
//! Each building patch pair yields three probability vectors: the pre-event
//! image against the positive prompts, and the post-event image against the
//! positive and the negative prompts. Only the maxima matter. Two signed
//! differences are fused into a weighted score `s`; lower means more likely
//! damaged, and `s >= sigma_tilde` is labelled undamaged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

pub const LABEL_UNDAMAGED: u8 = 1;
pub const LABEL_DAMAGED: u8 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEnsemble {
    pub positive: Vec<String>,
    pub negative: Vec<String>,
}

impl Default for PromptEnsemble {
    fn default() -> Self {
        let own = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            positive: own(&[
                "A satellite photo of a building",
                "normal building",
                "undamaged building",
                "building",
            ]),
            negative: own(&[
                "A satellite photo of a ruin",
                "damaged building",
                "destroyed building",
                "ruin",
            ]),
        }
    }
}

impl PromptEnsemble {
    pub fn validate(&self) -> Result<()> {
        if self.positive.is_empty() || self.negative.is_empty() {
            return Err(Error::Config("prompt ensemble needs positive and negative prompts".into()));
        }
        Ok(())
    }
}

/// Fusion weights for the two differences. `(0, 1)` scores the post-event
/// image alone, `(1, 0)` uses only the confidence change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    pub change: f64,
    pub post: f64,
}

impl Default for EnsembleWeights {
    fn default() -> Self {
        Self { change: 0.5, post: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub z_pre_pos_max: f64,
    pub z_post_pos_max: f64,
    pub z_post_neg_max: f64,
    /// Post minus pre positive confidence, plus the tolerance.
    pub delta_pos: f64,
    /// Post positive minus post negative confidence.
    pub delta_post: f64,
    pub s: f64,
}

/// Max-subtracted softmax.
pub fn softmax_normalize(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::InvalidInput("softmax of empty vector".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("softmax input is not finite".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

fn max_of(v: &[f64], name: &str) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::InvalidInput(format!("{name} probability vector is empty")));
    }
    Ok(v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

pub fn ensemble_score(
    z_pre_pos: &[f64],
    z_post_pos: &[f64],
    z_post_neg: &[f64],
    epsilon: f64,
    weights: EnsembleWeights,
) -> Result<ScoreBreakdown> {
    let pre_pos = max_of(z_pre_pos, "pre positive")?;
    let post_pos = max_of(z_post_pos, "post positive")?;
    let post_neg = max_of(z_post_neg, "post negative")?;
    let delta_pos = post_pos - pre_pos + epsilon;
    let delta_post = post_pos - post_neg;
    Ok(ScoreBreakdown {
        z_pre_pos_max: pre_pos,
        z_post_pos_max: post_pos,
        z_post_neg_max: post_neg,
        delta_pos,
        delta_post,
        s: weights.change * delta_pos + weights.post * delta_post,
    })
}

/// 1 (undamaged) iff `s >= sigma_tilde`, otherwise 2 (damaged).
pub fn classify_damage(s: f64, sigma_tilde: f64) -> u8 {
    if s >= sigma_tilde {
        LABEL_UNDAMAGED
    } else {
        LABEL_DAMAGED
    }
}

fn grow_axis(origin: f64, len: f64, pad: f64, min_side: f64, limit: f64) -> (f64, f64) {
    let mut start = origin - pad;
    let mut len = len + 2.0 * pad;
    if len < min_side {
        let center = start + len / 2.0;
        len = min_side;
        start = center - min_side / 2.0;
    }
    if len >= limit {
        return (0.0, limit);
    }
    if start < 0.0 {
        start = 0.0;
    }
    if start + len > limit {
        start = limit - len;
    }
    (start, len)
}

/// Context added around a box before it is cropped for scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchPadding {
    pub pad: f64,
    pub min_side: f64,
}

impl Default for PatchPadding {
    fn default() -> Self {
        Self { pad: 10.0, min_side: 50.0 }
    }
}

impl PatchPadding {
    pub fn window(&self, bbox: &BoundingBox, height: usize, width: usize) -> BoundingBox {
        pad_patch_window(bbox, height, width, self.pad, self.min_side)
    }
}

/// Context window around a box: dilate by `pad` on every side, grow
/// symmetrically to at least `min_side`, then shift (not shrink) to stay
/// inside the image.
pub fn pad_patch_window(bbox: &BoundingBox, height: usize, width: usize, pad: f64, min_side: f64) -> BoundingBox {
    let (x, w) = grow_axis(bbox.x, bbox.w, pad, min_side, width as f64);
    let (y, h) = grow_axis(bbox.y, bbox.h, pad, min_side, height as f64);
    BoundingBox { x, y, h, w }
}
