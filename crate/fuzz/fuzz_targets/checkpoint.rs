#![no_main]

use libfuzzer_sys::fuzz_target;
use phi_core::pipeline::{Checkpoint, Model};

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Checkpoint::decode(data) {
        assert_eq!(c.encode().expect("decoded checkpoint re-encodes"), data);
        let _ = Model::from_checkpoint(&c, None, false);
    }
});
