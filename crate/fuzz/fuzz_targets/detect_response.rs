#![no_main]

use image::RgbImage;
use libfuzzer_sys::fuzz_target;
use ubdd_core::inference::wire::{decode_detect_response, encode_detect_response, parse_detect_response};
use ubdd_core::inference::DetectionRequest;

fuzz_target!(|data: &[u8]| {
    let image = RgbImage::new(64, 48);
    let req = DetectionRequest { image: &image, text_prompt: "building", box_threshold: 0.35 };
    if let Ok(resp) = decode_detect_response(data, &req) {
        for d in &resp.detections {
            assert!(d.logit >= 0.35 && d.logit <= 1.0);
            assert!(d.bbox.fits_within(48.0, 64.0));
        }
    }
    if let Ok(resp) = parse_detect_response(data) {
        if resp.detections.iter().all(|d| d.logit.is_finite() && d.bbox.x.is_finite() && d.bbox.y.is_finite() && d.bbox.h.is_finite() && d.bbox.w.is_finite()) {
            assert_eq!(parse_detect_response(&encode_detect_response(&resp)).unwrap(), resp);
        }
    }
});
