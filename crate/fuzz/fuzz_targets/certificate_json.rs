#![no_main]

use libfuzzer_sys::fuzz_target;
use linfsr::ripcert::RipCertificate;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cert) = RipCertificate::from_json(text) {
        assert_eq!(RipCertificate::from_json(&cert.to_json().unwrap()).unwrap(), cert);
    }
});
