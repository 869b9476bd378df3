#![no_main]

use libfuzzer_sys::fuzz_target;
use mbtnet::kv::KvFile;
use mbtnet::model::ModelConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(kv) = KvFile::parse(text, "fuzz") {
        let _ = ModelConfig::from_kv(&kv.section("model"));
        let again = KvFile::parse(&kv.render(), "fuzz").expect("render round-trips");
        assert_eq!(again.entries(), kv.entries());
    }
});
