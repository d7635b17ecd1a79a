#![no_main]

use libfuzzer_sys::fuzz_target;
use ubdd_core::dataset::import_coco;

fuzz_target!(|data: &[u8]| {
    if let Ok((images, detections)) = import_coco(data) {
        assert!(detections.len() <= data.len());
        for d in &detections {
            assert!(d.score.is_finite());
            assert!(d.bbox.validate().is_ok());
        }
        let _ = images.len();
    }
});
