#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use mbtnet::data::DatasetManifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = DatasetManifest::parse(text, "fuzz", Path::new("/nonexistent")) {
        let _ = m.check_disjoint();
        let again = DatasetManifest::parse(&m.render(), "fuzz", Path::new("/nonexistent")).expect("render round-trips");
        assert_eq!(again.records, m.records);
    }
});
