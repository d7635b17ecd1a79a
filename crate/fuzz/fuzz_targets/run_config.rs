#![no_main]

use libfuzzer_sys::fuzz_target;
use ubdd_core::config::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = PipelineConfig::from_json_bytes(data) {
        let again = PipelineConfig::from_json_bytes(&cfg.to_json_pretty()).expect("echo re-parses");
        assert_eq!(again.to_json_pretty(), cfg.to_json_pretty());
    }
});
