#![no_main]

use libfuzzer_sys::fuzz_target;
use ubdd_core::dataset::ManifestFile;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = ManifestFile::from_json_bytes(data) {
        let mut ids: Vec<&str> = m.scenes.iter().map(|s| s.scene_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), m.scenes.len());
    }
});
