#![no_main]

use libfuzzer_sys::fuzz_target;
use ubdd_core::inference::wire::{decode_detect_request, decode_score_request, decode_segment_request, MAX_SIDE};

fuzz_target!(|data: &[u8]| {
    if let Ok((image, _, threshold)) = decode_detect_request(data) {
        assert!((0.0..=1.0).contains(&threshold));
        assert!(image.width() <= MAX_SIDE && image.height() <= MAX_SIDE);
    }
    if let Ok((image, prompt)) = decode_segment_request(data) {
        assert!(prompt.validate().is_ok());
        assert!(image.width() > 0 && image.height() > 0);
    }
    if let Ok((_, prompts)) = decode_score_request(data) {
        assert!(!prompts.is_empty());
    }
});
