use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_linfsr"))
}

fn run_ok(args: &[&str], dir: &Path) -> Output {
    let out = bin().args(args).current_dir(dir).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const CONFIG: &str = r#"{
  "name": "cli",
  "kind": "oblivious_recovery",
  "grid": [{"n": 200, "d": 50, "k": 2}, {"n": 120, "d": 50, "k": 3}],
  "trials": 5,
  "master_seed": 19
}"#;

#[test]
fn exit_codes() {
    assert_eq!(bin().output().unwrap().status.code(), Some(2));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
    assert_eq!(bin().arg("--version").output().unwrap().status.code(), Some(0));
    assert_eq!(bin().args(["certify", "--kind", "bogus", "--eps", "0.1", "m"]).output().unwrap().status.code(), Some(2));
    let missing = bin().args(["certify", "--kind", "linf-rip", "--eps", "0.1", "/nonexistent.lsrm"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent.lsrm"));
}

#[test]
fn gen_then_certify() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_ok(&["gen", "--n", "40", "--d", "12", "--k", "2", "--out-dir", "inst", "--csv"], dir.path());
    let inst_path = String::from_utf8(out.stdout).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join(inst_path.trim())).unwrap()).unwrap();
    let file = doc["matrix"]["file"].as_str().unwrap().to_string();
    assert_eq!(file.len(), 64 + 5);
    let bytes = fs::read(dir.path().join("inst").join(&file)).unwrap();
    assert_eq!(&bytes[..8], b"LSRMAT01");
    assert_eq!(bytes.len(), 16 + 8 * 40 * 12);
    let csv = fs::read_to_string(dir.path().join("inst/instance.csv")).unwrap();
    assert_eq!(csv.lines().count(), 40);
    assert!(csv.lines().all(|l| l.split(',').count() == 12));

    let m = format!("inst/{file}");
    let out = run_ok(&["certify", "--kind", "linf-rip", "--eps", "0.25", "--s", "3", &m], dir.path());
    let cert: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cert["kind"], "linf_rip");
    assert_eq!(cert["s"], 3);
    assert_eq!(cert["exact"], true);
    let holds = cert["witness"]["value"].as_f64().unwrap() <= 0.25;
    assert_eq!(cert["verdict"], if holds { "holds" } else { "fails" });

    let out = run_ok(&["certify", "--kind", "l2-rip", "--eps", "0.5", "--s", "2", "--sampled", "10", &m], dir.path());
    let cert: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cert["exact"], false);
    run_ok(&["certify", "--kind", "pi", "--eps", "0.9", &m], dir.path());
}

#[test]
fn run_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), CONFIG).unwrap();
    run_ok(&["run", "c.json", "--out", "a.csv"], dir.path());
    let b = bin()
        .args(["run", "c.json", "--out", "b.csv"])
        .env("LINFSR_THREADS", "1")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(b.status.success());
    let a = fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.csv")).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 1 + 10);
}

/// Recount the CSV with plain string splitting and compare with `report`.
#[test]
fn report_matches_independent_recount() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), CONFIG).unwrap();
    run_ok(&["run", "c.json", "--out", "r.csv"], dir.path());
    let text = fs::read_to_string(dir.path().join("r.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (gi, pi) = (col("grid_index"), col("passed"));
    let mut expected: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        let e = expected.entry(f[gi].parse().unwrap()).or_default();
        e.0 += 1;
        e.1 += usize::from(f[pi] == "true");
    }
    let out = run_ok(&["report", "r.csv", "--json"], dir.path());
    let groups: Vec<serde_json::Value> = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(groups.len(), expected.len());
    for g in groups {
        let (trials, passed) = expected[&g["grid_index"].as_u64().unwrap()];
        assert_eq!(g["trials"].as_u64().unwrap() as usize, trials);
        assert_eq!(g["passed"].as_u64().unwrap() as usize, passed);
    }
    let table = run_ok(&["report", "r.csv"], dir.path());
    assert_eq!(String::from_utf8(table.stdout).unwrap().lines().count(), 3);
}

#[test]
fn report_rejects_tampered_pass_flags() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), CONFIG).unwrap();
    run_ok(&["run", "c.json", "--out", "r.csv"], dir.path());
    let text = fs::read_to_string(dir.path().join("r.csv")).unwrap();
    let flipped = text.replacen(",true,,", ",false,,", 1);
    assert_ne!(flipped, text);
    fs::write(dir.path().join("bad.csv"), flipped).unwrap();
    let out = bin().args(["report", "bad.csv"]).current_dir(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn adversarial_pair_shares_one_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_ok(&["adversarial", "--n", "30", "--d", "80", "--k", "4", "--out-dir", "p"], dir.path());
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary["observation_gap"].as_f64().unwrap() < 1e-9);
    let read = |f: &str| -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(dir.path().join("p").join(f)).unwrap()).unwrap()
    };
    let (a, b) = (read("pair_1.json"), read("pair_2.json"));
    assert_eq!(a["matrix"], b["matrix"]);
    assert_eq!(a["y"], b["y"]);
    assert_ne!(a["truth"], b["truth"]);
    let mats = fs::read_dir(dir.path().join("p"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "lsrm"))
        .count();
    assert_eq!(mats, 1);

    let out = run_ok(&["adversarial", "--n", "30", "--d", "80", "--k", "4", "--metric-column", "5", "--out-dir", "m"], dir.path());
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["separation"], 1.0);
}

#[test]
fn sweep_expands_grid() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("s.json"),
        r#"{"name":"s","kind":"linf_rip_sweep","sweep":{"n":[20,40],"d":[10],"k":[2,3]},"trials":2,"master_seed":1}"#,
    )
    .unwrap();
    run_ok(&["sweep", "s.json", "--out", "e.json"], dir.path());
    let e: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("e.json")).unwrap()).unwrap();
    assert_eq!(e["grid"].as_array().unwrap().len(), 4);
    assert!(e["sweep"].is_null());
    run_ok(&["run", "e.json", "--out", "r.csv"], dir.path());
    let rows = fs::read_to_string(dir.path().join("r.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 8);
}
