#![no_main]

use libfuzzer_sys::fuzz_target;
use linfsr::io::{decode_matrix, encode_matrix};

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = decode_matrix(data) {
        // anything accepted re-encodes to the same bytes
        assert_eq!(encode_matrix(&m).unwrap(), data);
    }
});
