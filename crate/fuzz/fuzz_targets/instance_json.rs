#![no_main]

use libfuzzer_sys::fuzz_target;
use linfsr::io::InstanceDoc;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(doc) = InstanceDoc::parse(text) {
        let again = serde_json::to_string(&doc).unwrap();
        assert_eq!(InstanceDoc::parse(&again).unwrap(), doc);
    }
});
