//! The checked-in fuzz seeds are valid documents, so every fuzz target starts
//! from inputs that reach its round-trip assertions.

use std::fs;
use std::path::{Path, PathBuf};

use linfsr::harness::{read_records, ExperimentConfig};
use linfsr::io::{decode_matrix, encode_matrix, InstanceDoc};
use linfsr::padaptive::Transcript;
use linfsr::ripcert::RipCertificate;

fn seeds(target: &str) -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut v: Vec<PathBuf> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    assert!(!v.is_empty(), "no seeds in {}", dir.display());
    v
}

fn text(p: &Path) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn matrix_seeds() {
    let mut accepted = 0;
    for p in seeds("matrix_decode") {
        let bytes = fs::read(&p).unwrap();
        if let Ok(m) = decode_matrix(&bytes) {
            assert_eq!(encode_matrix(&m).unwrap(), bytes);
            accepted += 1;
        }
    }
    assert!(accepted >= 2);
}

#[test]
fn json_seeds() {
    for p in seeds("instance_json") {
        InstanceDoc::parse(&text(&p)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for p in seeds("config_json") {
        ExperimentConfig::from_json(&text(&p)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for p in seeds("certificate_json") {
        let c = RipCertificate::from_json(&text(&p)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(RipCertificate::from_json(&c.to_json().unwrap()).unwrap(), c);
    }
    for p in seeds("transcript_json") {
        let t = Transcript::from_json(&text(&p)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(Transcript::from_json(&t.to_json().unwrap()).unwrap(), t);
    }
}

#[test]
fn unsorted_transcript_mask_is_rejected() {
    let good = text(&seeds("transcript_json")[0]);
    let bad = good.replace("[1, 5]", "[5, 1]");
    assert_ne!(bad, good);
    assert!(Transcript::from_json(&bad).is_err());
}

#[test]
fn trial_csv_seeds() {
    for p in seeds("trial_csv") {
        let recs = read_records(fs::File::open(&p).unwrap()).unwrap();
        assert!(!recs.is_empty());
    }
}
