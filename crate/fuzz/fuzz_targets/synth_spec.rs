#![no_main]

use libfuzzer_sys::fuzz_target;
use ubdd_core::dataset::SyntheticSceneSpec;

fuzz_target!(|data: &[u8]| {
    if let Ok(spec) = SyntheticSceneSpec::from_json_bytes(data) {
        assert!(spec.validate().is_ok());
        let _ = spec.mock_settings();
    }
});
