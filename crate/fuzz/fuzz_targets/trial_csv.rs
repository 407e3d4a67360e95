#![no_main]

use libfuzzer_sys::fuzz_target;
use linfsr::harness::{read_records, write_records};

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = read_records(data) {
        let mut buf = Vec::new();
        write_records(&records, &mut buf).unwrap();
        assert_eq!(read_records(buf.as_slice()).unwrap().len(), records.len());
    }
});
