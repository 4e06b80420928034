use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[gen]
num_graphs = 80
[target]
epochs = 3
hidden = 8
[npaf]
k = 3
[explainer]
epochs = 1
samples = 1
[explainer.arch]
env_dim = 4
latent = 4
hidden = 8
[eval]
split = "id_test"
dot_count = 2
[bench]
sizes = [50, 100]
repeats = 1
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_open-xgnn"))
        .arg("--run-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let c = cfg.to_str().unwrap();
    for step in ["gen", "train-gnn", "fit-npaf", "train-explainer", "evaluate", "bench"] {
        let out = run(dir.path(), &["--config", c, step]);
        assert!(out.status.success(), "{step}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = run(dir.path(), &["--config", c, "explain", "--graph", "1"]);
    assert!(out.status.success());
    assert!(dir.path().join("explanations/graph_1.dot").exists());
    assert!(dir.path().join("explanations/graph_1.json").exists());
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
    assert!(dir.path().join("bench.csv").exists());
}

#[test]
fn missing_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["train-gnn"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("dataset.jsonl"), "{err}");
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn bad_config_exits_with_three_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[npaf]\nk = 0\n").unwrap();
    let out = run(dir.path(), &["--config", cfg.to_str().unwrap(), "gen"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("npaf.k"));
}

#[test]
fn unknown_subcommand_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["frobnicate"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}
