use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use spikereg::network::TensorRole;
use spikereg::snapshot;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_spikereg"));
    c.env_remove("SPIKEREG_SEED");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let o = run(dir, args);
    assert!(
        o.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

fn read(path: PathBuf) -> Vec<u8> {
    std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

const GEN: &[&str] = &[
    "gen",
    "--experiment",
    "elastic",
    "--dt",
    "5",
    "--train",
    "48",
    "--val",
    "12",
    "--test",
    "10",
    "--seed",
    "3",
    "--out",
    "d",
];
const TRAIN: &[&str] = &[
    "train",
    "--data",
    "d",
    "--n-u",
    "8",
    "--n-o",
    "8",
    "--epochs",
    "6",
    "--batch-size",
    "16",
    "--seed",
    "1",
];

/// A tiny generated dataset and a trained run in a fresh directory.
fn trained() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), GEN);
    ok(dir.path(), &[TRAIN, &["--out", "r"]].concat());
    dir
}

fn csv_rows(path: PathBuf) -> Vec<Vec<f64>> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn gen_is_byte_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        "gen",
        "--experiment",
        "plasticity",
        "--seed",
        "7",
        "--dt",
        "20",
        "--train",
        "30",
        "--val",
        "5",
        "--test",
        "5",
        "--out",
        "d",
    ];
    ok(a.path(), &args);
    ok(b.path(), &args);
    for f in [
        "train.csv",
        "val.csv",
        "test.csv",
        "dataset.json",
        "config.json",
    ] {
        assert_eq!(
            read(a.path().join("d").join(f)),
            read(b.path().join("d").join(f)),
            "{f}"
        );
    }
}

#[test]
fn gen_rows_and_sidecar_stats() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), GEN);
    let d = dir.path().join("d");
    for (f, n) in [("train.csv", 48), ("val.csv", 12), ("test.csv", 10)] {
        let rows = csv_rows(d.join(f));
        assert_eq!(rows.len(), n, "{f}");
        assert!(rows.iter().all(|r| r.len() == 10));
    }
    let rows = csv_rows(d.join("train.csv"));
    let moments = |cols: std::ops::Range<usize>| {
        let v: Vec<f64> = rows.iter().flat_map(|r| r[cols.clone()].to_vec()).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
        (mean, var.sqrt())
    };
    let meta = json(d.join("dataset.json"));
    let close = |a: f64, key: &str| {
        let b = meta[key].as_f64().unwrap();
        assert!((a - b).abs() <= 1e-12 * b.abs(), "{key}: {a} vs {b}");
    };
    let (m, s) = moments(0..5);
    close(m, "input_mean");
    close(s, "input_std");
    let (m, s) = moments(5..10);
    close(m, "target_mean");
    close(s, "target_std");
}

#[test]
fn config_file_and_env_seed() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"experiment": "ramberg-osgood", "train_size": 4, "val_size": 2, "test_size": 2, "dt": 6}"#).unwrap();
    let o = bin()
        .current_dir(dir.path())
        .env("SPIKEREG_SEED", "11")
        .args(["gen", "--config", "c.json", "--test", "3", "--out", "d"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let echo = json(dir.path().join("d/config.json"));
    assert_eq!(echo["seed"], 11);
    assert_eq!(echo["test_size"], 3);
    assert_eq!(echo["train_size"], 4);
    assert_eq!(json(dir.path().join("d/dataset.json"))["seed"], 11);
    // A flag beats the environment.
    let o = bin()
        .current_dir(dir.path())
        .env("SPIKEREG_SEED", "11")
        .args(["gen", "--config", "c.json", "--seed", "2", "--out", "e"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(json(dir.path().join("e/config.json"))["seed"], 2);
}

#[test]
fn train_writes_artifacts_and_reruns_identically() {
    let dir = trained();
    let r = dir.path().join("r");
    for f in ["report.json", "metrics.csv", "snapshot.bin", "config.json"] {
        assert!(r.join(f).exists(), "{f}");
    }
    let report = json(r.join("report.json"));
    assert_eq!(report["epochs"].as_array().unwrap().len(), 7);
    assert_eq!(csv_rows(r.join("metrics.csv")).len(), 7);
    ok(dir.path(), &[TRAIN, &["--out", "r2"]].concat());
    for f in ["report.json", "metrics.csv", "snapshot.bin"] {
        assert_eq!(read(r.join(f)), read(dir.path().join("r2").join(f)), "{f}");
    }
    // Thread count does not change the arithmetic.
    ok(
        dir.path(),
        &[TRAIN, &["--out", "r3", "--threads", "3"]].concat(),
    );
    assert_eq!(
        read(r.join("metrics.csv")),
        read(dir.path().join("r3/metrics.csv"))
    );
}

#[test]
fn grad_check_flag_reports_small_error() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), GEN);
    ok(
        dir.path(),
        &[
            "train",
            "--data",
            "d",
            "--epochs",
            "1",
            "--n-u",
            "4",
            "--grad-check",
            "--out",
            "g",
        ],
    );
    let g = json(dir.path().join("g/gradcheck.json"));
    assert!(g["max_rel_error"].as_f64().unwrap() < 1e-4);
    assert!(g["decoder"]["max_rel_error"].as_f64().unwrap() < 1e-6);
}

#[test]
fn eval_matches_report_and_predictions() {
    let dir = trained();
    ok(
        dir.path(),
        &[
            "eval",
            "--snapshot",
            "r/snapshot.bin",
            "--data",
            "d",
            "--split",
            "train",
            "--out",
            "e",
        ],
    );
    let m = json(dir.path().join("e/metrics.json"));
    let report = json(dir.path().join("r/report.json"));
    for k in ["loss", "all_steps", "last_step"] {
        assert_eq!(m[k], report["train"][k], "{k}");
    }

    ok(
        dir.path(),
        &[
            "eval",
            "--snapshot",
            "r/snapshot.bin",
            "--data",
            "d",
            "--out",
            "t",
        ],
    );
    let m = json(dir.path().join("t/metrics.json"));
    let rows = csv_rows(dir.path().join("t/predictions.csv"));
    assert_eq!(rows.len(), 10 * 5);
    let (mut all, mut last, mut sq) = (0.0, 0.0, 0.0);
    let std = json(dir.path().join("d/dataset.json"))["target_std"]
        .as_f64()
        .unwrap();
    for s in 0..10 {
        let h = &rows[s * 5..s * 5 + 5];
        assert!(h
            .iter()
            .enumerate()
            .all(|(t, r)| r[0] == s as f64 && r[1] == t as f64));
        let diff: f64 = h.iter().map(|r| (r[3] - r[4]).powi(2)).sum();
        let norm: f64 = h.iter().map(|r| r[3] * r[3]).sum();
        all += (diff / norm).sqrt();
        last += (h[4][3] - h[4][4]).abs() / h[4][3].abs();
        sq += h.iter().map(|r| ((r[3] - r[4]) / std).powi(2)).sum::<f64>();
    }
    let close = |a: f64, k: &str| {
        let b = m[k].as_f64().unwrap();
        assert!((a - b).abs() <= 1e-10 * b.abs(), "{k}: {a} vs {b}");
    };
    close(all / 10.0, "all_steps");
    close(last / 10.0, "last_step");
    close(sq / 50.0, "loss");
    // Elastic strain is the input itself.
    let test = csv_rows(dir.path().join("d/test.csv"));
    assert_eq!(rows[7][2], test[1][2]);
}

#[test]
fn profile_agrees_with_eval_and_sums() {
    let dir = trained();
    ok(
        dir.path(),
        &[
            "eval",
            "--snapshot",
            "r/snapshot.bin",
            "--data",
            "d",
            "--chunk-size",
            "3",
            "--out",
            "e",
        ],
    );
    ok(
        dir.path(),
        &[
            "profile",
            "--snapshot",
            "r/snapshot.bin",
            "--data",
            "d",
            "--chunk-size",
            "4",
            "--out",
            "p",
        ],
    );
    let energy = json(dir.path().join("p/energy.json"));
    let layers = energy["layers"].as_array().unwrap();
    let sum = |k: &str| layers.iter().map(|l| l[k].as_f64().unwrap()).sum::<f64>();
    assert_eq!(
        sum("spiking_energy"),
        energy["spiking_total"].as_f64().unwrap()
    );
    assert_eq!(sum("dense_energy"), energy["dense_total"].as_f64().unwrap());
    for s in json(dir.path().join("e/metrics.json"))["sparsity"]
        .as_array()
        .unwrap()
    {
        let l = layers.iter().find(|l| l["layer"] == s["layer"]).unwrap();
        assert_eq!(l["spike_count"], s["spikes"]);
    }
    let table = std::fs::read_to_string(dir.path().join("p/energy.txt")).unwrap();
    assert!(table.contains("Total Energy"));
}

#[test]
fn silent_snapshot_has_no_spike_events() {
    let dir = trained();
    let (spec, mut params) = snapshot::read(&dir.path().join("r/snapshot.bin")).unwrap();
    for (role, t) in params.tensors_mut() {
        if role == TensorRole::Weight {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    snapshot::write(&dir.path().join("silent.bin"), &spec, &params).unwrap();
    ok(
        dir.path(),
        &[
            "profile",
            "--snapshot",
            "silent.bin",
            "--data",
            "d",
            "--out",
            "p",
        ],
    );
    let energy = json(dir.path().join("p/energy.json"));
    let e_upd = energy["devices"]["spiking"]["energy_per_neuron_update"]
        .as_f64()
        .unwrap();
    for l in energy["layers"].as_array().unwrap() {
        assert_eq!(l["spike_count"], 0);
        // Only the first hidden layer sees real-valued input events.
        if l["layer"].as_u64().unwrap() > 1 {
            assert_eq!(l["synaptic_events"], 0);
            let upd = l["neuron_updates"].as_f64().unwrap() * e_upd / 10.0;
            assert!((l["spiking_energy"].as_f64().unwrap() - upd).abs() <= 1e-15 * upd.max(1e-30));
        }
    }
}

#[test]
fn exit_codes() {
    let dir = trained();
    let code = |args: &[&str]| run(dir.path(), args).status.code().unwrap();
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["gen"]), 1);
    assert_eq!(code(&["train", "--data", "d", "--preset", "nonsense"]), 1);
    assert_eq!(code(&["train", "--data", "d", "--dt", "7"]), 1);
    std::fs::write(dir.path().join("bad.json"), r#"{"epochz": 1}"#).unwrap();
    assert_eq!(code(&["train", "--config", "bad.json"]), 1);
    assert_eq!(code(&["train", "--data", "missing"]), 2);
    assert_eq!(
        code(&["eval", "--snapshot", "d/train.csv", "--data", "d"]),
        2
    );
    // An absurd learning rate blows the parameters up; the run still leaves
    // its artifacts behind.
    let o = run(
        dir.path(),
        &[TRAIN, &["--lr", "1e300", "--clip-norm", "0", "--out", "x"]].concat(),
    );
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let report = json(dir.path().join("x/report.json"));
    assert!(report["diverged"].is_string());
    assert!(dir.path().join("x/snapshot.bin").exists());

    std::fs::write(dir.path().join("d/val.csv"), "x_t0\n1\n").unwrap();
    assert_eq!(
        code(&["eval", "--snapshot", "r/snapshot.bin", "--data", "d"]),
        2
    );
}
