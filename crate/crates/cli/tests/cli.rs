use std::fs;
use std::process::{Command, Output};

fn homcrit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_homcrit")).args(args).output().unwrap()
}

fn text(o: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

#[test]
fn validate_prints_defaults() {
    let o = homcrit(&["validate", "--experiment", "twopoint", "--out", "unused"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let cfg: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(cfg["eta"], 0.1);
    assert_eq!(cfg["experiment"], "twopoint");
    let _ = fs::remove_dir_all("unused");
}

#[test]
fn resolution_guard_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = homcrit(&["approx", "--epsilons", "1/64", "--nodes-per-unit", "128", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    let t = text(&o);
    assert!(t.contains("resolution guard") && t.contains("1024"), "{t}");
    assert!(!dir.path().join("approx.csv").exists());
}

#[test]
fn bad_window_and_unknown_flag() {
    assert_eq!(homcrit(&["turning", "--delta0", "0.6"]).status.code(), Some(2));
    assert_eq!(homcrit(&["validate"]).status.code(), Some(2));
    assert_ne!(homcrit(&["cell", "--no-such-flag"]).status.code(), Some(0));
}

#[test]
fn weiss_run_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = homcrit(&["weiss", "--corpus-size", "40", "--out", out, "--jobs", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    for f in ["weiss.csv", "weiss_config.json", "weiss_constants.csv", "summary.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let o = homcrit(&["report", "--out", out]);
    assert_eq!(o.status.code(), Some(0));
    assert!(text(&o).contains("0 failed"));
}

#[test]
fn failing_rows_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = homcrit(&["cell", "--n-cell", "32", "--out", out]);
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
    assert!(text(&o).contains("FAIL"));
    assert_eq!(homcrit(&["report", "--out", out]).status.code(), Some(1));
}

#[test]
fn config_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    fs::write(&path, r#"{"experiment": "weiss", "corpus_size": 10, "seed": 3}"#).unwrap();
    let o = homcrit(&[
        "validate",
        "--config",
        path.to_str().unwrap(),
        "--seed",
        "9",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let cfg: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(cfg["seed"], 9);
    assert_eq!(cfg["corpus_size"], 10);
}
