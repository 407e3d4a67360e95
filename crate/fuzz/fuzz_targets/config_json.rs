#![no_main]

use libfuzzer_sys::fuzz_target;
use linfsr::harness::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::from_json(text) {
        let again = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(again, cfg);
        // grid expansion must not panic on anything that validated
        let _ = cfg.expanded_grid();
    }
});
