#![no_main]

use image::RgbImage;
use libfuzzer_sys::fuzz_target;
use ubdd_core::geometry::BoundingBox;
use ubdd_core::inference::wire::decode_segment_response;
use ubdd_core::inference::SegmentationRequest;

fuzz_target!(|data: &[u8]| {
    let image = RgbImage::new(16, 12);
    let req = SegmentationRequest { image: &image, prompt: BoundingBox { x: 1.0, y: 1.0, h: 4.0, w: 4.0 } };
    if let Ok(resp) = decode_segment_response(data, &req) {
        assert_eq!(resp.mask.dims(), (12, 16));
        assert!(resp.mask.as_slice().iter().all(|v| *v <= 1));
    }
});
