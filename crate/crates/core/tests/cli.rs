use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fairinfl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairinfl"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.toml"), "n_per_cell = 50\nseed = 4\n").unwrap();
    let out = fairinfl(tmp.path(), &["synth", "--config", "c.toml", "--n-per-cell", "30", "--out", "o"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = fs::read_to_string(tmp.path().join("o/data.csv")).unwrap().lines().count();
    assert_eq!(rows, 4 * 30 + 1);
    let cfg = fs::read_to_string(tmp.path().join("o/config.toml")).unwrap();
    assert!(cfg.contains("n_per_cell = 30"));
    assert!(cfg.contains("seed = 4"));
}

#[test]
fn unknown_surrogate_lists_valid_kinds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fairinfl(tmp.path(), &["train", "--surrogate", "bogus", "--out", "o"]);
    assert!(!out.status.success());
    let msg = stderr(&out);
    assert!(msg.contains("surrogate"), "{msg}");
    for kind in ["dp", "tpr", "fpr", "eo", "cov", "mine"] {
        assert!(msg.contains(kind), "{msg}");
    }
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn unknown_config_key_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.toml"), "epochs = 2\nlearning_rate = 0.1\n").unwrap();
    let out = fairinfl(tmp.path(), &["train", "--config", "c.toml"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("`learning_rate`"), "{}", stderr(&out));
}

#[test]
fn failed_run_leaves_no_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fairinfl(tmp.path(), &["train", "--data", "missing.csv", "--out", "o"]);
    assert!(!out.status.success());
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn full_keep_fraction_makes_strategies_coincide() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fairinfl(
        tmp.path(),
        &[
            "sweep", "--n-per-cell", "40", "--epochs", "2", "--hidden", "4", "--fractions", "1.0", "--out", "o",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(tmp.path().join("o/sweep.csv")).unwrap();
    let metrics: Vec<String> = csv
        .lines()
        .skip(1)
        .map(|l| l.splitn(2, ',').nth(1).unwrap().to_owned())
        .collect();
    assert_eq!(metrics.len(), 3);
    assert!(metrics.iter().all(|m| m == &metrics[0]), "{csv}");
}

#[test]
fn score_writes_a_row_per_example() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fairinfl(
        tmp.path(),
        &["score", "--n-per-cell", "25", "--epochs", "2", "--hidden", "4", "--out", "o"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(tmp.path().join("o/influence.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("index,z,y,fairness_score,loss_score"));
    assert!(lines.count() > 0);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("o/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "score");
    assert!(manifest["config"].get("out").is_none());
}
