#![no_main]

use libfuzzer_sys::fuzz_target;
use phi_core::pipeline::TrainConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = TrainConfig::from_text(text) {
            let back = TrainConfig::from_text(&cfg.to_text()).expect("printed config parses");
            assert_eq!(back.to_text(), cfg.to_text());
        }
    }
});
