use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fairaudit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairaudit")).args(args).current_dir(cwd).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn generate_then_run_file_source_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = fairaudit(&["generate", "--out", "credit.csv", "--n", "800", "--seed", "4", "--graph", "graph.json"], d);
    assert_eq!(code(&o), 0, "{o:?}");
    assert!(stdout(&o).contains("wrote 800 rows"));
    assert!(d.join("graph.json").exists());
    std::fs::copy(configs().join("csv_source.toml"), d.join("csv_source.toml")).unwrap();

    let o = fairaudit(&["run", "csv_source.toml", "--store", "store"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    for id in ["Logistic", "RandomForest", "NeuralNetwork", "FTU", "CFF", "ThreshCDP"] {
        assert!(out.contains(id), "{out}");
    }
    assert!(!out.contains("failed"), "{out}");
    let id = out.lines().find_map(|l| l.strip_prefix("stored ")).unwrap().trim().to_string();

    // same config and data again: identical results, nothing rewritten
    let o = fairaudit(&["run", "csv_source.toml", "--store", "store"], d);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("already stored"));

    let o = fairaudit(&["report", &id, "--store", "store"], d);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("ThreshCDP"));
    let o = fairaudit(&["report", "--store", "store", "--json"], d);
    assert_eq!(code(&o), 0);
    let list: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(list[0]["id"], id.as_str());
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.toml"), "[split]\nfraction = 1.5\n").unwrap();
    std::fs::write(d.join("typo.toml"), "[[strategies]]\nmethod = \"nonsense\"\n").unwrap();
    std::fs::write(d.join("gen.toml"), "p_protected = 2.0\n").unwrap();
    assert_eq!(code(&fairaudit(&["run", "bad.toml"], d)), 1);
    assert_eq!(code(&fairaudit(&["run", "typo.toml"], d)), 1);
    assert_eq!(code(&fairaudit(&["run", "missing.toml"], d)), 1);
    assert_eq!(code(&fairaudit(&["generate", "--out", "x.csv", "--config", "gen.toml"], d)), 1);
    assert_eq!(code(&fairaudit(&["frobnicate"], d)), 1);
    assert_eq!(code(&fairaudit(&["--help"], d)), 0);
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // valid config whose data file does not exist
    std::fs::copy(configs().join("csv_source.toml"), d.join("csv_source.toml")).unwrap();
    assert_eq!(code(&fairaudit(&["run", "csv_source.toml", "--store", "store"], d)), 2);
    assert_eq!(code(&fairaudit(&["report", "--store", "no-such-store"], d)), 2);
    std::fs::create_dir(d.join("empty")).unwrap();
    assert_eq!(code(&fairaudit(&["report", "exp-unknown", "--store", "empty"], d)), 2);
    assert_eq!(code(&fairaudit(&["serve", "--store", "no-such-store"], d)), 2);
}
