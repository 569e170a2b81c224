use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"{
  "seed": 3,
  "train": {"iterations": 4, "batch_size": 2},
  "eval": {"slots": 6, "batch_size": 3, "snr_db": [5, 15]}
}"#;

fn mdx(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdx"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn setup(config: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), config).unwrap();
    dir
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn unknown_subcommand_prints_usage() {
    let dir = setup(SMALL);
    let o = mdx(&["frobnicate"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn missing_config_file() {
    let dir = setup(SMALL);
    let o = mdx(&["train", "--config", "absent.json"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn invalid_config_values() {
    let dir = setup(r#"{"train": {"batch_size": 0}}"#);
    assert_eq!(code(&mdx(&["train", "--config", "cfg.json"], dir.path())), 2);
    let dir = setup(r#"{"eval": {"snr_db": []}}"#);
    assert_eq!(code(&mdx(&["eval", "--config", "cfg.json"], dir.path())), 2);
    let dir = setup(r#"{"no_such_field": 1}"#);
    assert_eq!(code(&mdx(&["flops", "--config", "cfg.json"], dir.path())), 2);
}

#[test]
fn eval_without_checkpoint() {
    let dir = setup(SMALL);
    let o = mdx(&["eval", "--config", "cfg.json", "--out", "run"], dir.path());
    assert_eq!(code(&o), 4);
}

#[test]
fn corrupt_checkpoint() {
    let dir = setup(SMALL);
    std::fs::create_dir(dir.path().join("run")).unwrap();
    std::fs::write(dir.path().join("run/checkpoint.mdxc"), b"MDXCgarbage").unwrap();
    let o = mdx(&["eval", "--config", "cfg.json", "--out", "run"], dir.path());
    assert_eq!(code(&o), 4);
}

#[test]
fn baseline_eval_needs_no_checkpoint() {
    let dir = setup(
        r#"{"eval": {"slots": 4, "snr_db": [60], "receivers": ["PERFECT_CSI"], "noise": "genie"}}"#,
    );
    let o = mdx(&["eval", "--config", "cfg.json", "--out", "run"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("run/eval_perfect_csi.csv")).unwrap();
    let row = csv.lines().find(|l| l.starts_with("60,")).unwrap();
    let ber: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(ber, 0.0);
}

#[test]
fn train_then_eval_is_reproducible() {
    let dir = setup(SMALL);
    let run = |out: &str| {
        let o = mdx(&["train", "--config", "cfg.json", "--out", out], dir.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let o = mdx(&["eval", "--config", "cfg.json", "--out", out], dir.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    };
    run("a");
    run("b");
    for f in [
        "loss.csv",
        "checkpoint.mdxc",
        "eval_mdx.csv",
        "eval_ls_lmmse.csv",
        "eval_perfect_csi.csv",
    ] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{} differs", f);
    }
    let loss = std::fs::read_to_string(dir.path().join("a/loss.csv")).unwrap();
    assert!(loss.starts_with("# seed=3 config_sha256="));
    assert_eq!(loss.lines().filter(|l| !l.starts_with('#')).count(), 5);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/train_manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = setup(SMALL);
    assert_eq!(code(&mdx(&["train", "--config", "cfg.json", "--out", "a", "--seed", "3"], dir.path())), 0);
    assert_eq!(code(&mdx(&["train", "--config", "cfg.json", "--out", "b", "--seed", "4"], dir.path())), 0);
    let a = std::fs::read(dir.path().join("a/loss.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/loss.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn flops_report_bands() {
    let dir = setup("{}");
    let o = mdx(&["flops", "--config", "cfg.json", "--out", "run"], dir.path());
    assert_eq!(code(&o), 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/flops.json")).unwrap()).unwrap();
    let params = report["param_count"].as_u64().unwrap();
    assert!((2300..=3100).contains(&params));
    let cfgs = report["configurations"].as_array().unwrap();
    let small = cfgs[0]["total_mults"].as_f64().unwrap();
    let big = cfgs[1]["total_mults"].as_f64().unwrap();
    assert!((0.35e9..=1.4e9).contains(&small));
    assert!((6.0..=12.0).contains(&(big / small)));
}

#[test]
fn gradcheck_passes() {
    let dir = setup(r#"{"gradcheck": {"instances": 1}}"#);
    let o = mdx(&["gradcheck", "--config", "cfg.json", "--seed", "11"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.lines().count() >= 8);
    assert!(!out.contains("FAIL"));
}

#[test]
fn small_array_checkpoint_runs_on_a_large_array() {
    let dir = setup(
        r#"{"seed": 5,
            "train": {"iterations": 3, "batch_size": 2,
                      "scenario": {"prbs": 1, "drop": {"n_rx": 4, "max_layers": 2}}}}"#,
    );
    assert_eq!(code(&mdx(&["train", "--config", "cfg.json", "--out", "small"], dir.path())), 0);
    std::fs::write(
        dir.path().join("big.json"),
        r#"{"seed": 5, "checkpoint": "small/checkpoint.mdxc",
            "eval": {"slots": 4, "batch_size": 2, "snr_db": [0, 10, 20], "receivers": ["MDX"],
                     "scenario": {"prbs": 2, "fixed_layers": true, "drop": {"n_rx": 16, "max_layers": 4}}}}"#,
    )
    .unwrap();
    let o = mdx(&["eval", "--config", "big.json", "--out", "big"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("big/eval_mdx.csv")).unwrap();
    assert!(csv.starts_with("# seed=5 config_sha256="));
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert!(r.split(',').all(|v| !v.is_empty() && v != "NaN"), "{}", r);
    }
}

#[test]
fn coded_sweep_is_written_when_configured() {
    let dir = setup(
        r#"{"eval": {"slots": 2, "snr_db": [10], "receivers": ["LS_LMMSE"]},
            "coded": {"snr_db": [20], "blocks": 5}}"#,
    );
    let o = mdx(&["eval", "--config", "cfg.json", "--out", "run"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("run/eval_coded.csv")).unwrap();
    let row = csv.lines().find(|l| l.starts_with("20,")).unwrap();
    let cols: Vec<&str> = row.split(',').collect();
    assert_eq!(cols[2].parse::<f64>().unwrap(), 0.0);
    assert_eq!(cols[5], "5");
    let manifest = std::fs::read_to_string(dir.path().join("run/eval_manifest.json")).unwrap();
    assert!(manifest.contains("eval_coded.csv"));
}
