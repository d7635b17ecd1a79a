//! Foundation-model roles behind narrow traits: a text-prompted box
//! detector, a box-prompted segmenter and an image/prompt similarity
//! scorer. Implementations: the deterministic [`mock::MockBackend`], the HTTP
//! [`remote::RemoteClient`], and [`BoxSegmenter`] which rasterizes the
//! prompt box when no segmentation model is available.

pub mod mock;
pub mod remote;
pub mod server;
pub mod wire;

use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BoundingBox;
use crate::mask::{rasterize_box, BinaryMask};
use crate::raster::dims;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl BackendError {
    /// Only transport failures are retried; everything else is final.
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

pub type BackendResult<T> = std::result::Result<T, BackendError>;

#[derive(Debug, Clone, Copy)]
pub struct DetectionRequest<'a> {
    pub image: &'a RgbImage,
    pub text_prompt: &'a str,
    pub box_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub logit: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionResponse {
    pub detections: Vec<Detection>,
}

impl DetectionResponse {
    /// Every box must be a valid box inside the request frame and every
    /// logit must lie in `[box_threshold, 1]`.
    pub fn validate(&self, req: &DetectionRequest<'_>) -> BackendResult<()> {
        let (h, w) = dims(req.image);
        for d in &self.detections {
            if !(d.logit.is_finite() && d.logit >= req.box_threshold && d.logit <= 1.0) {
                return Err(BackendError::Malformed(format!(
                    "logit {} outside [{}, 1]",
                    d.logit, req.box_threshold
                )));
            }
            d.bbox
                .validate()
                .map_err(|e| BackendError::Malformed(e.to_string()))?;
            if !d.bbox.fits_within(h as f64, w as f64) {
                return Err(BackendError::Malformed(format!("box {:?} outside {h}x{w} frame", d.bbox)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SegmentationRequest<'a> {
    pub image: &'a RgbImage,
    pub prompt: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResponse {
    pub mask: BinaryMask,
}

impl SegmentationResponse {
    pub fn validate(&self, req: &SegmentationRequest<'_>) -> BackendResult<()> {
        if self.mask.dims() != dims(req.image) {
            return Err(BackendError::Malformed(format!(
                "mask {:?} does not match image {:?}",
                self.mask.dims(),
                dims(req.image)
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScoreRequest<'a> {
    pub image: &'a RgbImage,
    pub prompts: &'a [String],
}

impl ScoreRequest<'_> {
    pub fn check(&self) -> BackendResult<()> {
        if self.prompts.is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt list".into()));
        }
        Ok(())
    }
}

/// Raw similarity logits, one per prompt, in prompt order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreResponse {
    pub logits: Vec<f64>,
}

impl ScoreResponse {
    pub fn validate(&self, req: &ScoreRequest<'_>) -> BackendResult<()> {
        if self.logits.len() != req.prompts.len() {
            return Err(BackendError::Malformed(format!(
                "{} logits for {} prompts",
                self.logits.len(),
                req.prompts.len()
            )));
        }
        if self.logits.iter().any(|l| !l.is_finite()) {
            return Err(BackendError::Malformed("non-finite logit".into()));
        }
        Ok(())
    }
}

pub trait Detector: Send + Sync {
    fn detect(&self, req: &DetectionRequest<'_>) -> BackendResult<DetectionResponse>;
}

pub trait Segmenter: Send + Sync {
    fn segment(&self, req: &SegmentationRequest<'_>) -> BackendResult<SegmentationResponse>;
}

pub trait Scorer: Send + Sync {
    fn score_prompts(&self, req: &ScoreRequest<'_>) -> BackendResult<ScoreResponse>;
}

/// Segmenter fallback that returns the prompt box itself as the mask.
#[derive(Debug, Clone, Copy, Default)]
pub struct BoxSegmenter;

impl Segmenter for BoxSegmenter {
    fn segment(&self, req: &SegmentationRequest<'_>) -> BackendResult<SegmentationResponse> {
        let (h, w) = dims(req.image);
        Ok(SegmentationResponse { mask: rasterize_box(&req.prompt, h, w) })
    }
}

/// The three roles wired together for a run.
#[derive(Clone)]
pub struct Backends {
    pub detector: Arc<dyn Detector>,
    pub segmenter: Arc<dyn Segmenter>,
    pub scorer: Arc<dyn Scorer>,
}

impl Backends {
    /// One implementation serving all three roles.
    pub fn uniform<B>(backend: B) -> Self
    where
        B: Detector + Segmenter + Scorer + 'static,
    {
        let shared = Arc::new(backend);
        Self {
            detector: shared.clone(),
            segmenter: shared.clone(),
            scorer: shared,
        }
    }

    pub fn with_segmenter(mut self, segmenter: Arc<dyn Segmenter>) -> Self {
        self.segmenter = segmenter;
        self
    }
}

impl std::fmt::Debug for Backends {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backends").finish_non_exhaustive()
    }
}
