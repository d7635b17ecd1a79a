//! JSON bodies of the `/v1/detect`, `/v1/segment` and `/v1/score` endpoints.
//!
//! Rasters travel as base64-encoded PNG. Field names are fixed:
//!
//! | endpoint     | request                              | response                        |
//! |--------------|--------------------------------------|---------------------------------|
//! | `/v1/detect` | `image`, `text_prompt`, `box_threshold` | `boxes: [{x, y, h, w, logit}]` |
//! | `/v1/segment`| `image`, `box: {x, y, h, w}`         | `mask`                          |
//! | `/v1/score`  | `image`, `prompts: [string]`         | `logits: [number]`              |
//!
//! The `decode_*` functions take untrusted bytes and never panic.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{
    BackendError, BackendResult, Detection, DetectionRequest, DetectionResponse, ScoreRequest, ScoreResponse,
    SegmentationRequest, SegmentationResponse,
};
use crate::geometry::BoundingBox;
use crate::mask::BinaryMask;
use crate::raster::{decode_png, encode_png};

pub const DETECT_PATH: &str = "/v1/detect";
pub const SEGMENT_PATH: &str = "/v1/segment";
pub const SCORE_PATH: &str = "/v1/score";
pub const HEALTH_PATH: &str = "/healthz";

/// Upper bound on decoded raster side length.
pub const MAX_SIDE: u32 = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRect {
    pub x: f64,
    pub y: f64,
    pub h: f64,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireBox {
    pub x: f64,
    pub y: f64,
    pub h: f64,
    pub w: f64,
    pub logit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectBody {
    pub image: String,
    pub text_prompt: String,
    pub box_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectReply {
    pub boxes: Vec<WireBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentBody {
    pub image: String,
    #[serde(rename = "box")]
    pub prompt: WireRect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReply {
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBody {
    pub image: String,
    pub prompts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReply {
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReply {
    pub error: String,
}

fn to_rect(b: &BoundingBox) -> WireRect {
    WireRect { x: b.x, y: b.y, h: b.h, w: b.w }
}

fn from_rect(r: &WireRect) -> BoundingBox {
    BoundingBox { x: r.x, y: r.y, h: r.h, w: r.w }
}

pub fn encode_image(img: &RgbImage) -> BackendResult<String> {
    let png = encode_png(img).map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
    Ok(B64.encode(png))
}

fn decode_base64_png(text: &str) -> Result<Vec<u8>, String> {
    let bytes = B64.decode(text.as_bytes()).map_err(|e| format!("base64: {e}"))?;
    // Check the header before allocating a full decode buffer.
    let reader = image::ImageReader::with_format(std::io::Cursor::new(&bytes), image::ImageFormat::Png);
    let (w, h) = reader.into_dimensions().map_err(|e| format!("png header: {e}"))?;
    if w == 0 || h == 0 || w > MAX_SIDE || h > MAX_SIDE {
        return Err(format!("raster {w}x{h} outside 1..={MAX_SIDE}"));
    }
    Ok(bytes)
}

/// Decode a base64 PNG raster, rejecting empty or oversized images.
pub fn decode_image(text: &str) -> Result<RgbImage, String> {
    let bytes = decode_base64_png(text)?;
    decode_png(&bytes).map_err(|e| e.to_string())
}

pub fn decode_mask(text: &str) -> Result<BinaryMask, String> {
    let bytes = decode_base64_png(text)?;
    BinaryMask::from_png_bytes(&bytes).map_err(|e| e.to_string())
}

pub fn encode_mask(mask: &BinaryMask) -> BackendResult<String> {
    let png = mask
        .to_png_bytes()
        .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
    Ok(B64.encode(png))
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("wire types always serialize")
}

// ----- requests (client side encodes, server side decodes) -----

pub fn encode_detect_request(req: &DetectionRequest<'_>) -> BackendResult<Vec<u8>> {
    Ok(to_json(&DetectBody {
        image: encode_image(req.image)?,
        text_prompt: req.text_prompt.to_string(),
        box_threshold: req.box_threshold,
    }))
}

/// Server side: `(image, text_prompt, box_threshold)`.
pub fn decode_detect_request(bytes: &[u8]) -> Result<(RgbImage, String, f64), String> {
    let body: DetectBody = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
    if !(0.0..=1.0).contains(&body.box_threshold) {
        return Err(format!("box_threshold {} outside [0,1]", body.box_threshold));
    }
    Ok((decode_image(&body.image)?, body.text_prompt, body.box_threshold))
}

pub fn encode_segment_request(req: &SegmentationRequest<'_>) -> BackendResult<Vec<u8>> {
    Ok(to_json(&SegmentBody { image: encode_image(req.image)?, prompt: to_rect(&req.prompt) }))
}

pub fn decode_segment_request(bytes: &[u8]) -> Result<(RgbImage, BoundingBox), String> {
    let body: SegmentBody = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
    let prompt = from_rect(&body.prompt);
    prompt.validate().map_err(|e| e.to_string())?;
    Ok((decode_image(&body.image)?, prompt))
}

pub fn encode_score_request(req: &ScoreRequest<'_>) -> BackendResult<Vec<u8>> {
    Ok(to_json(&ScoreBody { image: encode_image(req.image)?, prompts: req.prompts.to_vec() }))
}

pub fn decode_score_request(bytes: &[u8]) -> Result<(RgbImage, Vec<String>), String> {
    let body: ScoreBody = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
    if body.prompts.is_empty() {
        return Err("empty prompt list".into());
    }
    Ok((decode_image(&body.image)?, body.prompts))
}

// ----- responses (server side encodes, client side decodes + validates) -----

pub fn encode_detect_response(resp: &DetectionResponse) -> Vec<u8> {
    to_json(&DetectReply {
        boxes: resp
            .detections
            .iter()
            .map(|d| WireBox { x: d.bbox.x, y: d.bbox.y, h: d.bbox.h, w: d.bbox.w, logit: d.logit })
            .collect(),
    })
}

/// Parse without checking against a request; order and values are kept
/// exactly as sent.
pub fn parse_detect_response(bytes: &[u8]) -> BackendResult<DetectionResponse> {
    let reply: DetectReply = serde_json::from_slice(bytes).map_err(|e| BackendError::Malformed(e.to_string()))?;
    Ok(DetectionResponse {
        detections: reply
            .boxes
            .iter()
            .map(|b| Detection { bbox: BoundingBox { x: b.x, y: b.y, h: b.h, w: b.w }, logit: b.logit })
            .collect(),
    })
}

pub fn decode_detect_response(bytes: &[u8], req: &DetectionRequest<'_>) -> BackendResult<DetectionResponse> {
    let resp = parse_detect_response(bytes)?;
    resp.validate(req)?;
    Ok(resp)
}

pub fn encode_segment_response(resp: &SegmentationResponse) -> BackendResult<Vec<u8>> {
    Ok(to_json(&SegmentReply { mask: encode_mask(&resp.mask)? }))
}

pub fn parse_segment_response(bytes: &[u8]) -> BackendResult<SegmentationResponse> {
    let reply: SegmentReply = serde_json::from_slice(bytes).map_err(|e| BackendError::Malformed(e.to_string()))?;
    let mask = decode_mask(&reply.mask).map_err(BackendError::Malformed)?;
    Ok(SegmentationResponse { mask })
}

pub fn decode_segment_response(bytes: &[u8], req: &SegmentationRequest<'_>) -> BackendResult<SegmentationResponse> {
    let resp = parse_segment_response(bytes)?;
    resp.validate(req)?;
    Ok(resp)
}

pub fn encode_score_response(resp: &ScoreResponse) -> Vec<u8> {
    to_json(&ScoreReply { logits: resp.logits.clone() })
}

pub fn parse_score_response(bytes: &[u8]) -> BackendResult<ScoreResponse> {
    let reply: ScoreReply = serde_json::from_slice(bytes).map_err(|e| BackendError::Malformed(e.to_string()))?;
    Ok(ScoreResponse { logits: reply.logits })
}

pub fn decode_score_response(bytes: &[u8], req: &ScoreRequest<'_>) -> BackendResult<ScoreResponse> {
    let resp = parse_score_response(bytes)?;
    resp.validate(req)?;
    Ok(resp)
}

pub fn encode_error(message: &str) -> Vec<u8> {
    to_json(&ErrorReply { error: message.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn detect_response_keeps_order_and_values() {
        let body = br#"{"boxes":[{"x":5.5,"y":1,"h":2,"w":3,"logit":0.4},{"x":0,"y":0,"h":1,"w":1,"logit":0.9}]}"#;
        let resp = parse_detect_response(body).unwrap();
        assert_eq!(resp.detections[0].bbox.x, 5.5);
        assert_eq!(resp.detections[1].logit, 0.9);
        let again = parse_detect_response(&encode_detect_response(&resp)).unwrap();
        assert_eq!(again, resp);
    }

    #[test]
    fn malformed_bodies_are_reported() {
        assert!(matches!(parse_detect_response(b"{"), Err(BackendError::Malformed(_))));
        assert!(matches!(parse_detect_response(br#"{"boxes":[{"x":1}]}"#), Err(BackendError::Malformed(_))));
        assert!(matches!(parse_segment_response(br#"{"mask":"!!"}"#), Err(BackendError::Malformed(_))));

        let img = RgbImage::new(4, 4);
        let prompts = vec!["a".to_string(), "b".to_string()];
        let req = ScoreRequest { image: &img, prompts: &prompts };
        let short = br#"{"logits":[1.0]}"#;
        assert!(matches!(decode_score_response(short, &req), Err(BackendError::Malformed(_))));
    }

    #[test]
    fn request_round_trip() {
        let img = RgbImage::from_pixel(6, 5, Rgb([1, 2, 3]));
        let req = DetectionRequest { image: &img, text_prompt: "building", box_threshold: 0.14 };
        let (back, prompt, thr) = decode_detect_request(&encode_detect_request(&req).unwrap()).unwrap();
        assert_eq!(back, img);
        assert_eq!(prompt, "building");
        assert_eq!(thr, 0.14);

        let sreq = SegmentationRequest { image: &img, prompt: BoundingBox { x: 1.0, y: 1.0, h: 2.0, w: 2.0 } };
        let (_, b) = decode_segment_request(&encode_segment_request(&sreq).unwrap()).unwrap();
        assert_eq!(b, sreq.prompt);

        let prompts = vec!["ruin".to_string()];
        let qreq = ScoreRequest { image: &img, prompts: &prompts };
        let (_, p) = decode_score_request(&encode_score_request(&qreq).unwrap()).unwrap();
        assert_eq!(p, prompts);
    }

    #[test]
    fn server_side_rejects_bad_requests() {
        let img = encode_image(&RgbImage::new(2, 2)).unwrap();
        let bad_thr = format!(r#"{{"image":"{img}","text_prompt":"b","box_threshold":1.5}}"#);
        assert!(decode_detect_request(bad_thr.as_bytes()).is_err());
        let empty = format!(r#"{{"image":"{img}","prompts":[]}}"#);
        assert!(decode_score_request(empty.as_bytes()).is_err());
        let degenerate = format!(r#"{{"image":"{img}","box":{{"x":0,"y":0,"h":0,"w":1}}}}"#);
        assert!(decode_segment_request(degenerate.as_bytes()).is_err());
    }
}
