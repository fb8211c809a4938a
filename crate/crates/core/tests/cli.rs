//! Contract tests for the `histda` binary.

use std::path::{Path, PathBuf};
use std::process::Command;

use histda::data::{load_feature_csv, SyntheticConfig, SyntheticOracle};
use histda::matrix::Matrix;
use serde_json::{json, Value};

fn histda(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_histda")).args(args).output().unwrap()
}

fn small_synthetic() -> Value {
    json!({
        "synthetic": {
            "counts": {
                "source_train": 200, "source_val": 40, "source_test": 40,
                "target_labeled": 20, "target_unlabeled": 100,
                "target_val": 60, "target_test": 80
            }
        }
    })
}

fn small_train(epochs: usize) -> Value {
    json!({
        "epochs": epochs, "batch_size": 32, "bins": 20, "support": [0.0, 100.0],
        "hidden": [16, 8], "t1": 2, "t2": 10, "mode": "HL_WMME"
    })
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn run_ok(args: &[&str]) -> String {
    let out = histda(args);
    assert!(out.status.success(), "{:?}: {}", args, String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const TRAIN_ARTIFACTS: [&str; 5] = ["checkpoint.bin", "epochs.jsonl", "report.json", "series.csv", "cumerr.csv"];

#[test]
fn train_writes_every_artifact_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({ "data": small_synthetic(), "train": small_train(20), "seed": 4 });
    let path = write_config(dir.path(), "train.json", &cfg);
    let before = std::fs::read(&path).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        run_ok(&["train", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    }
    assert_eq!(std::fs::read(&path).unwrap(), before);
    for name in TRAIN_ARTIFACTS {
        let x = std::fs::read(a.join(name)).unwrap();
        assert!(!x.is_empty(), "{name}");
        assert_eq!(x, std::fs::read(b.join(name)).unwrap(), "{name} differs between runs");
    }
    let log = std::fs::read_to_string(a.join("epochs.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 20);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["mode"], "HL_WMME");
    assert_eq!(report["target_test"]["n"], 80);
    let series = std::fs::read_to_string(a.join("series.csv")).unwrap();
    assert_eq!(series.lines().next(), Some("timestamp,reference,uncalibrated,calibrated"));
    assert_eq!(series.lines().count(), 81);

    let other = dir.path().join("c");
    run_ok(&["train", "--config", path.to_str().unwrap(), "--out", other.to_str().unwrap(), "--seed", "5"]);
    assert_ne!(std::fs::read(a.join("checkpoint.bin")).unwrap(), std::fs::read(other.join("checkpoint.bin")).unwrap());
}

#[test]
fn missing_input_is_a_config_error_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = json!({
        "data": { "files": { "source": "nope.csv", "target": "also_nope.csv", "target_location": 7 } },
        "output_dir": "out"
    });
    let path = write_config(dir.path(), "c.json", &cfg);
    let res = histda(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&res.stderr).is_empty());
    assert!(!out.exists());

    let res = histda(&["train", "--config", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    let both = json!({ "data": { "synthetic": {}, "files": {} }, "output_dir": "out" });
    let path = write_config(dir.path(), "both.json", &both);
    assert_eq!(histda(&["train", "--config", path.to_str().unwrap()]).status.code(), Some(2));
}

/// Hourly sensor CSV with a plausible sensor response.
fn sensor_csv(path: &Path, hours: usize, gain: f64, bad_header: bool) {
    let mut s = String::from(if bad_header {
        "time,pm25,pm10,t,rh,ref\n"
    } else {
        "timestamp,pm25_lcs,pm10_lcs,temperature,humidity,ref_pm25\n"
    });
    for h in 0..hours {
        let truth = 40.0 + 25.0 * ((h as f64) / 9.0).sin() + 10.0 * ((h as f64) / 31.0).cos();
        let hum = 60.0 + 20.0 * ((h as f64) / 24.0 * std::f64::consts::TAU).sin();
        let lcs = gain * truth * (1.0 + 0.004 * (hum - 60.0));
        s.push_str(&format!(
            "2022-01-{:02}T{:02}:00:00Z,{lcs:.3},{:.3},{:.2},{hum:.2},{truth:.3}\n",
            1 + h / 24,
            h % 24,
            1.8 * lcs,
            27.0 + ((h % 24) as f64 - 12.0).abs() * 0.3,
        ));
    }
    std::fs::write(path, s).unwrap();
}

#[test]
fn trains_from_sensor_files() {
    let dir = tempfile::tempdir().unwrap();
    sensor_csv(&dir.path().join("source.csv"), 400, 1.2, false);
    sensor_csv(&dir.path().join("target.csv"), 400, 0.8, false);
    let cfg = json!({
        "data": { "files": {
            "source": "source.csv", "target": "target.csv",
            "source_durations": { "train_hours": 250, "val_hours": 60, "test_hours": 60 },
            "target_durations": { "labeled_hours": 48, "unlabeled_hours": 200, "val_hours": 60, "test_hours": 60 }
        }},
        "train": small_train(15),
        "output_dir": "run"
    });
    let path = write_config(dir.path(), "real.json", &cfg);
    let before = std::fs::read(dir.path().join("source.csv")).unwrap();
    run_ok(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(std::fs::read(dir.path().join("source.csv")).unwrap(), before);
    for name in TRAIN_ARTIFACTS {
        assert!(dir.path().join("run").join(name).is_file(), "{name}");
    }
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/report.json")).unwrap()).unwrap();
    assert_eq!(report["target_test"]["n"], 60);
    assert!(report["uncalibrated_test"]["mae"].as_f64().unwrap() > 0.0);

    sensor_csv(&dir.path().join("target.csv"), 400, 0.8, true);
    let res = histda(&["train", "--config", path.to_str().unwrap(), "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(3));
}

#[test]
fn ablation_reports_every_mode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "data": small_synthetic(),
        "train": small_train(12),
        "ablation": { "seeds": [0, 1] },
        "output_dir": "ab"
    });
    let path = write_config(dir.path(), "ab.json", &cfg);
    let table = run_ok(&["ablate", "--config", path.to_str().unwrap()]);
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ab/ablation.json")).unwrap()).unwrap();
    let rows = report["rows"].as_array().unwrap();
    let modes: Vec<&str> = rows.iter().map(|r| r["mode"].as_str().unwrap()).collect();
    assert_eq!(modes, ["HL", "HL_MME", "HL_WME", "HL_DD_WMME", "HL_WMME"]);
    for r in rows {
        let runs = r["runs"].as_array().unwrap();
        assert_eq!(runs.len(), 2);
        let mut r2: Vec<f64> = runs.iter().map(|x| x["r2_x100"].as_f64().unwrap()).collect();
        r2.sort_by(f64::total_cmp);
        assert_eq!(r["median_r2_x100"].as_f64().unwrap(), 0.5 * (r2[0] + r2[1]));
        assert!(r["median_mae"].as_f64().is_some());
    }
    let text = std::fs::read_to_string(dir.path().join("ab/ablation.txt")).unwrap();
    assert_eq!(text, table);
    assert_eq!(text.lines().count(), 6);

    let mut off = cfg.clone();
    off["train"]["alpha_override"] = json!(0.0);
    off["output_dir"] = json!("off");
    let path = write_config(dir.path(), "off.json", &off);
    run_ok(&["ablate", "--config", path.to_str().unwrap()]);
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("off/ablation.json")).unwrap()).unwrap();
    let row = |m: &str| report["rows"].as_array().unwrap().iter().find(|r| r["mode"] == m).unwrap().clone();
    assert_eq!(row("HL")["runs"], row("HL_WMME")["runs"]);
    assert_eq!(row("HL")["runs"], row("HL_MME")["runs"]);
}

#[test]
fn gridsearch_contract() {
    let dir = tempfile::tempdir().unwrap();
    let mut train = small_train(1);
    train["hidden"] = json!([4]);
    let cfg = json!({
        "data": small_synthetic(),
        "train": train,
        "grid": { "bins": "20:1220:40" },
        "output_dir": "grid"
    });
    let path = write_config(dir.path(), "g.json", &cfg);
    run_ok(&["gridsearch", "--config", path.to_str().unwrap()]);
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("grid/gridsearch.json")).unwrap()).unwrap();
    let entries = report["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 31);
    let scores: Vec<f64> = entries.iter().map(|e| e["val_r2_x100"].as_f64().unwrap()).collect();
    let best = report["best_index"].as_u64().unwrap() as usize;
    assert!(scores.iter().all(|&s| s <= scores[best]));
    assert_eq!(report["best_config"]["bins"], entries[best]["bins"]);

    let empty = json!({ "data": small_synthetic(), "train": small_train(1), "output_dir": "none" });
    let path = write_config(dir.path(), "e.json", &empty);
    assert_eq!(histda(&["gridsearch", "--config", path.to_str().unwrap()]).status.code(), Some(2));
    assert!(!dir.path().join("none").exists());
}

#[test]
fn synth_files_are_reproducible_and_respect_the_gap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({ "data": { "synthetic": {} }, "seed": 9 });
    let path = write_config(dir.path(), "s.json", &cfg);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        run_ok(&["synth", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    }
    let defaults = SyntheticConfig::default().counts;
    let want = [
        ("source_train", defaults.source_train),
        ("source_val", defaults.source_val),
        ("source_test", defaults.source_test),
        ("target_labeled", defaults.target_labeled),
        ("target_unlabeled", defaults.target_unlabeled),
        ("target_val", defaults.target_val),
        ("target_test", defaults.target_test),
    ];
    for (name, rows) in want {
        let file = format!("{name}.csv");
        let bytes = std::fs::read(a.join(&file)).unwrap();
        assert_eq!(bytes, std::fs::read(b.join(&file)).unwrap(), "{file}");
        let frame = load_feature_csv(&a.join(&file)).unwrap();
        assert_eq!(frame.len(), rows, "{file}");
        assert_eq!(frame.labels.iter().all(Option::is_none), name == "target_unlabeled");
    }
    let sidecar: SyntheticConfig =
        serde_json::from_str(&std::fs::read_to_string(a.join("synthetic.json")).unwrap()).unwrap();
    assert_eq!(sidecar.seed, 9);
    let oracle = SyntheticOracle::from_config(&sidecar).unwrap();
    let labeled = load_feature_csv(&a.join("target_labeled.csv")).unwrap();
    let x: &Matrix = &labeled.x;
    assert_eq!(oracle.eval_rows(x).iter().filter(|&&y| sidecar.in_gap(y)).count(), 0);
    let unlabeled = load_feature_csv(&a.join("target_unlabeled.csv")).unwrap();
    assert!(oracle.eval_rows(&unlabeled.x).iter().any(|&y| sidecar.in_gap(y)));

    let bad = json!({ "data": { "synthetic": { "dim": 0 } }, "output_dir": "bad" });
    let path = write_config(dir.path(), "bad.json", &bad);
    assert_eq!(histda(&["synth", "--config", path.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn shipped_configs_parse() {
    use histda::cli::{grid_from_config, RunConfig};
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            // Data files are user supplied, so only the schema is checked.
            let cfg: RunConfig = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
            cfg.train.validate().unwrap();
            assert!(cfg.output_dir.is_some(), "{}", path.display());
            if !cfg.grid.bins.is_empty() {
                assert!(!grid_from_config(&cfg).unwrap().points().is_empty());
            }
            seen += 1;
        }
    }
    assert!(seen >= 2);
}
