use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn qotsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qotsim"))
        .args(args)
        .env_remove("QOTSIM_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = qotsim(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small multi-shipment world config written next to the run.
fn tiny_config(dir: &Path) -> PathBuf {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/multi_shipment.json");
    let mut cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(root).unwrap()).unwrap();
    cfg["products"] = 12.into();
    cfg["horizon"] = 24.into();
    let path = dir.join("tiny.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn gen(dir: &Path, seed: &str, out: &Path) {
    let cfg = tiny_config(dir);
    ok(&["gen-data", "--config", s(&cfg), "--seed", seed, "--out", s(out)]);
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn gen_data_is_deterministic_in_the_seed() {
    let tmp = TempDir::new().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    gen(tmp.path(), "5", &a);
    gen(tmp.path(), "5", &b);
    gen(tmp.path(), "6", &c);
    let read = |d: &Path| fs::read(d.join("history.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    let m: serde_json::Value = serde_json::from_slice(&fs::read(a.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 5);
    assert_eq!(m["command"], "gen-data");
    assert!(m["outputs"].as_object().is_some_and(|o| !o.is_empty()));
}

#[test]
fn usage_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    let p = s(tmp.path());
    for args in [
        vec!["eval-qot", "--bogus"],
        vec!["backtest", "--world", p, "--policies", "a", "--out", p, "--mode", "oracle"],
        vec!["eval-qot", "--model", p, "--world", p, "--out", p, "--metrics", "crps,mape"],
    ] {
        let out = qotsim(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
    let out = Command::new(env!("CARGO_BIN_EXE_qotsim"))
        .args(["report", "--run", p])
        .env("QOTSIM_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_66_with_one_line() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nope.json");
    let out = qotsim(&["gen-data", "--config", s(&missing), "--seed", "1", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(66));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("nope.json"));

    let out = qotsim(&["report", "--run", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(66));
}

#[test]
fn pipeline_produces_reports() {
    let tmp = TempDir::new().unwrap();
    let t = tmp.path();
    let (data, qot, eval, pol, bt) = (t.join("data"), t.join("qot"), t.join("eval"), t.join("pol"), t.join("bt"));
    gen(t, "3", &data);
    ok(&["train-qot", "--world", s(&data), "--seed", "3", "--out", s(&qot), "--epochs", "2"]);
    ok(&["eval-qot", "--model", s(&qot), "--world", s(&data), "--out", s(&eval), "--samples", "20", "--seed", "3"]);
    let metrics = rows(&eval.join("metrics.csv"));
    for model in ["genqot", "vlt"] {
        for name in ["crps", "ql_p50", "ql_p90"] {
            assert!(metrics.iter().any(|r| r[0] == name && r[1] == model), "{name} {model}");
        }
    }
    assert!(eval.join("reliability.csv").exists());
    let only_crps = t.join("crps_only");
    ok(&["report", "--run", s(&eval), "--out", s(&only_crps), "--metrics", "crps"]);
    assert!(rows(&only_crps.join("metrics.csv")).iter().all(|r| !r[0].starts_with("ql_")));

    ok(&[
        "train-policy", "--world", s(&data), "--mode", "genqot", "--model", s(&qot), "--seed", "3",
        "--out", s(&pol.join("qot_dbp")), "--epochs", "2",
    ]);
    ok(&["backtest", "--world", s(&data), "--policies", "qot_dbp", "--policy-dir", s(&pol), "--out", s(&bt)]);
    let rewards = rows(&bt.join("rewards.csv"));
    assert_eq!(rewards.len(), 1);
    assert_eq!(rewards[0][0], "qot_dbp");
    assert_eq!(rewards[0][2].parse::<f64>().unwrap(), 100.0);
    assert!(bt.join("trajectories/qot_dbp.jsonl").exists());

    // regenerating the report from the same run gives the same bytes
    let again = t.join("again");
    ok(&["report", "--run", s(&bt), "--out", s(&again)]);
    for f in ["rewards.csv", "rewards.json", "period_histograms.csv", "metrics.json"] {
        assert_eq!(fs::read(bt.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn identical_policies_compare_at_par() {
    let tmp = TempDir::new().unwrap();
    let t = tmp.path();
    let (data, pol, bt) = (t.join("data"), t.join("pol"), t.join("bt"));
    gen(t, "4", &data);
    ok(&[
        "train-policy", "--world", s(&data), "--mode", "vlt_model", "--seed", "4",
        "--out", s(&pol.join("a")), "--epochs", "2",
    ]);
    ok(&[
        "train-policy", "--world", s(&data), "--mode", "vlt_model", "--seed", "4",
        "--out", s(&pol.join("b")), "--epochs", "2",
    ]);
    ok(&[
        "backtest", "--world", s(&data), "--policies", "a,b,newsvendor", "--policy-dir", s(&pol),
        "--seeds", "2", "--baseline", "a", "--out", s(&bt),
    ]);
    let rewards = rows(&bt.join("rewards.csv"));
    let b = rewards.iter().find(|r| r[0] == "b").unwrap();
    let lo: f64 = b[3].parse().unwrap();
    let hi: f64 = b[4].parse().unwrap();
    assert!(lo <= 100.0 && 100.0 <= hi, "{b:?}");
    assert!(rewards.iter().any(|r| r[0] == "newsvendor"));
}
