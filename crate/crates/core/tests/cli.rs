use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Map, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_anomaly-rl"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "command failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn metrics(path: &Path) -> Map<String, Value> {
    let mut m: Map<String, Value> = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    m.remove("timestamp").expect("metrics carry a timestamp");
    m
}

fn small_config(data: &Path, out: &Path) -> Value {
    json!({
        "dataset": {"kind": "csv", "path": data},
        "n_steps": 8,
        "episodes": 3,
        "seed": 11,
        "agent": {"hidden": 4, "batch_size": 8, "warmup_steps": 30, "eps_decay_steps": 300},
        "vae": {"hidden": [6], "latent": 2, "epochs": 3},
        "active": {"n_al": 4, "k_lp": 5},
        "output_dir": out
    })
}

#[test]
fn synth_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let out = run(bin().args(["synth", "--t", "240", "--n-anomalies", "4", "--seed", "2", "--out"]).arg(&data_dir));
    let csv = String::from_utf8(out.stdout).unwrap().trim().to_string();
    assert!(csv.ends_with("synth-2.csv"));
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "timestamp,value,is_anomaly");
    assert_eq!(text.lines().count(), 241);
    assert_eq!(text.lines().skip(1).filter(|l| l.ends_with(",1")).count(), 4);

    let run_a = dir.path().join("a");
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, small_config(Path::new(&csv), &run_a).to_string()).unwrap();
    run(bin().args(["train", "--config"]).arg(&cfg_path));
    for name in ["config.json", "vae.ckpt", "qnet.ckpt", "run.log.jsonl", "labels.jsonl", "metrics.json", "predictions/synth-2.csv"] {
        assert!(run_a.join(name).exists(), "{name} missing from run directory");
    }
    assert_eq!(fs::read_to_string(run_a.join("run.log.jsonl")).unwrap().lines().count(), 3);

    // the echoed config alone reproduces the run
    let run_b = dir.path().join("b");
    run(bin().args(["train", "--config"]).arg(run_a.join("config.json")).arg("--output-dir").arg(&run_b));
    assert_eq!(metrics(&run_a.join("metrics.json")), metrics(&run_b.join("metrics.json")));
    assert_eq!(fs::read(run_a.join("qnet.ckpt")).unwrap(), fs::read(run_b.join("qnet.ckpt")).unwrap());

    // evaluating the saved network reproduces the final test metrics, twice
    run(bin().args(["eval", "--run"]).arg(&run_a));
    let eval = metrics(&run_a.join("eval/metrics.json"));
    assert_eq!(eval, metrics(&run_a.join("metrics.json")));
    run(bin().args(["eval", "--run"]).arg(&run_a).arg("--out").arg(dir.path().join("eval2")));
    assert_eq!(eval, metrics(&dir.path().join("eval2/metrics.json")));

    // a different seed is a different run
    let run_c = dir.path().join("c");
    run(bin().args(["train", "--config"]).arg(&cfg_path).args(["--seed", "12", "--output-dir"]).arg(&run_c));
    assert_ne!(fs::read(run_a.join("qnet.ckpt")).unwrap(), fs::read(run_c.join("qnet.ckpt")).unwrap());

    // truncated parameters
    let ckpt = run_a.join("qnet.ckpt");
    let mut doc: Value = serde_json::from_slice(&fs::read(&ckpt).unwrap()).unwrap();
    doc["params"].as_array_mut().unwrap().truncate(3);
    fs::write(&ckpt, doc.to_string()).unwrap();
    let bad = bin().args(["eval", "--run"]).arg(&run_a).output().unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("shape mismatch"));
}

#[test]
fn missing_dataset_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, small_config(&dir.path().join("absent.csv"), &out).to_string()).unwrap();
    let res = bin().args(["train", "--config"]).arg(&cfg_path).output().unwrap();
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("missing file"));
    assert!(!out.exists());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, r#"{"episodez": 3}"#).unwrap();
    let res = bin().args(["train", "--config"]).arg(&cfg_path).output().unwrap();
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("unknown field"));
}
