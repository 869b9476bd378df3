#![no_main]

use libfuzzer_sys::fuzz_target;
use mbtnet::tensor::checkpoint::{decode_section, PARAM_MAGIC};
use mbtnet::tensor::{ParamStore, Tensor};
use mbtnet::trainer::decode_checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok((entries, used)) = decode_section(data, PARAM_MAGIC) {
        assert!(used <= data.len());
        for e in &entries {
            let _ = e.to_tensor::<f32>();
        }
    }
    let mut store = ParamStore::<f32>::new();
    store.add("w", Tensor::zeros(&[2, 2]).unwrap()).unwrap();
    store.add("b", Tensor::zeros(&[2]).unwrap()).unwrap();
    let _ = decode_checkpoint(data, &mut store);
});
