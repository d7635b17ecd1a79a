#![no_main]

use libfuzzer_sys::fuzz_target;
use ubdd_core::mask::{BinaryMask, DamageLevelMask, EvalMask};

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = BinaryMask::from_png_bytes(data) {
        assert!(m.as_slice().iter().all(|v| *v <= 1));
        let back = BinaryMask::from_png_bytes(&m.to_png_bytes().unwrap()).unwrap();
        assert_eq!(back, m);
    }
    if let Ok(m) = EvalMask::from_png_bytes(data) {
        assert!(m.as_slice().iter().all(|v| *v <= 2));
    }
    if let Ok(m) = DamageLevelMask::from_png_bytes(data) {
        assert!(m.as_slice().iter().all(|v| *v <= 4));
    }
});
