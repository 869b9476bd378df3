#![no_main]

use libfuzzer_sys::fuzz_target;
use mbtnet::supervision::png::decode_mask_png;

fuzz_target!(|data: &[u8]| {
    if let Ok(mask) = decode_mask_png(data) {
        assert!(mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
});
