#![no_main]

use libfuzzer_sys::fuzz_target;
use linfsr::padaptive::Transcript;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(t) = Transcript::from_json(text) {
        assert_eq!(Transcript::from_json(&t.to_json().unwrap()).unwrap(), t);
    }
});
