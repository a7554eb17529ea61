#![no_main]

use libfuzzer_sys::fuzz_target;
use phi_core::synthdata::{decode_phif, encode_phif};

fuzz_target!(|data: &[u8]| {
    if let Ok((samples, m, d)) = decode_phif(data) {
        let again = encode_phif(&samples, m, d).expect("decoded data re-encodes");
        assert_eq!(again, data);
    }
});
