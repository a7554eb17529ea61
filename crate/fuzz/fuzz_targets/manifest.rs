#![no_main]

use libfuzzer_sys::fuzz_target;
use phi_core::synthdata::DatasetManifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = DatasetManifest::parse(text) {
            let back = DatasetManifest::parse(&m.to_text()).expect("printed manifest parses");
            assert_eq!(back.to_text(), m.to_text());
        }
    }
});
