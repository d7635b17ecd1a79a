#![no_main]

use libfuzzer_sys::fuzz_target;
use ubdd_core::inference::mock::{MockSettings, MockWorld};

fuzz_target!(|data: &[u8]| {
    if let Ok(settings) = serde_json::from_slice::<MockSettings>(data) {
        let _ = settings.validate_noise();
    }
    if let Ok(world) = serde_json::from_slice::<MockWorld>(data) {
        let _ = world.validate();
    }
});
