#![no_main]

use image::RgbImage;
use libfuzzer_sys::fuzz_target;
use ubdd_core::inference::wire::decode_score_response;
use ubdd_core::inference::ScoreRequest;

fuzz_target!(|data: &[u8]| {
    let image = RgbImage::new(4, 4);
    let prompts = vec!["a".to_string(), "b".to_string(), "c".to_string()];
    let req = ScoreRequest { image: &image, prompts: &prompts };
    if let Ok(resp) = decode_score_response(data, &req) {
        assert_eq!(resp.logits.len(), 3);
        assert!(resp.logits.iter().all(|l| l.is_finite()));
    }
});
