#![no_main]

use libfuzzer_sys::fuzz_target;
use mbtnet::tensor::checkpoint::{decode_section, OPTIMIZER_MAGIC};

fuzz_target!(|data: &[u8]| {
    if let Ok((entries, used)) = decode_section(data, OPTIMIZER_MAGIC) {
        assert!(used <= data.len());
        for e in &entries {
            let _ = e.to_tensor::<f64>();
        }
    }
});
