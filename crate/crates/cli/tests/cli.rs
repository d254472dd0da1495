use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BLOBS: &str = r#"{
    "dataset": {"kind": "blobs",
                "spec": {"num_classes": 3, "dim": 2, "centers": [[0,0],[3,0],[0,3]],
                         "spreads": [0.5,0.5,0.5], "samples_per_class": 20, "seed": 1},
                "test_samples_per_class": 10},
    "network": {"hidden_dims": [8]},
    "loss_modes": ["softmax", "gsoftmax"],
    "schedule": {"kind": "malleable", "base_rate": 0.05, "max_epoch": 4,
                 "pieces": [{"end_epoch": 4, "exp_start": 0, "exp_end": -2}]},
    "optimizer": {"batch_size": 16},
    "epochs": 4,
    "seeds": [1, 2, 3]
}"#;

fn gsoftmax(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsoftmax"))
        .args(args)
        .env_remove("GSOFTMAX_OUT")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&gsoftmax(&["frobnicate"])), 1);
    assert_eq!(code(&gsoftmax(&["gradcheck", "--trials", "x"])), 1);
    assert_eq!(code(&gsoftmax(&["gradcheck", "--trials", "0"])), 1);
    assert_eq!(code(&gsoftmax(&["--help"])), 0);
}

#[test]
fn gradcheck_is_deterministic() {
    let a = gsoftmax(&["gradcheck", "--trials", "4", "--seed", "9"]);
    let b = gsoftmax(&["gradcheck", "--trials", "4", "--seed", "9"]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let report: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(report["trials"], 4);
    assert_eq!(report["zero_lambda_distribution_grads_vanish"], true);

    let csv = gsoftmax(&["gradcheck", "--trials", "1", "--format", "csv"]);
    assert_eq!(code(&csv), 0);
    let text = stdout(&csv);
    assert!(text.starts_with("block,checked,max_rel_error,passed"));
    // trial 0 has lambda = 0, so the distribution blocks are exactly zero
    assert!(text.lines().any(|l| l.starts_with("single.d_mu,") && l.contains(",0e0,true")));
}

#[test]
fn schedule_preview_reference_curve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "schedule.json",
        r#"{"kind": "malleable", "base_rate": 0.1, "max_epoch": 1100,
            "pieces": [{"end_epoch": 1000, "exp_start": 0, "exp_end": -8},
                       {"end_epoch": 1100, "exp_start": -8, "exp_end": -9}]}"#,
    );
    let out = gsoftmax(&["schedule-preview", "--config", &cfg]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("epoch,rate"));
    let rows: Vec<(usize, f64)> = lines
        .map(|l| {
            let (e, r) = l.split_once(',').unwrap();
            (e.parse().unwrap(), r.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 1100);
    assert!(rows.iter().enumerate().all(|(i, &(e, _))| e == i + 1));
    assert!(rows.windows(2).all(|w| w[1].1 < w[0].1));
    assert!((rows[999].1 - 0.1 * (-8f64).exp()).abs() < 1e-12);
}

#[test]
fn schedule_preview_constant_and_bare_spec() {
    let dir = tempfile::tempdir().unwrap();
    let constant = write(dir.path(), "c.json", r#"{"kind": "constant", "rate": 0.25}"#);
    let out = gsoftmax(&["schedule-preview", "--config", &constant, "--epochs", "3"]);
    assert_eq!(stdout(&out), "epoch,rate\n1,2.5e-1\n2,2.5e-1\n3,2.5e-1\n");
    assert_eq!(code(&gsoftmax(&["schedule-preview", "--config", &constant])), 1);

    let bare = write(
        dir.path(),
        "s.json",
        r#"{"base_rate": 1.0, "max_epoch": 3, "pieces": [{"end_epoch": 3, "exp_start": 0, "exp_end": 0}]}"#,
    );
    let out = gsoftmax(&["schedule-preview", "--config", &bare]);
    assert_eq!(stdout(&out), "epoch,rate\n1,1e0\n2,1e0\n3,1e0\n");

    let bad = write(dir.path(), "bad.json", r#"{"kind": "constant", "rate": -1}"#);
    assert_eq!(code(&gsoftmax(&["schedule-preview", "--config", &bad, "--epochs", "2"])), 1);
    let unknown = write(dir.path(), "u.json", r#"{"kind": "cosine"}"#);
    assert_eq!(code(&gsoftmax(&["schedule-preview", "--config", &unknown])), 1);
}

#[test]
fn run_writes_summary_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", BLOBS);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let res = gsoftmax(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    }
    let sa = fs::read(a.join("summary.json")).unwrap();
    assert_eq!(sa, fs::read(b.join("summary.json")).unwrap());

    let summary: serde_json::Value = serde_json::from_slice(&sa).unwrap();
    let runs = summary["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 6);
    for run in runs {
        for key in ["final_loss", "test_accuracy", "test_map", "mean_ratio", "mean_compactness", "mean_separability"] {
            assert!(run[key].is_number(), "{key} missing in {run}");
        }
        assert_eq!(run["separability"]["per_class"].as_array().unwrap().len(), 3);
    }
    let comparisons = summary["comparisons"].as_array().unwrap();
    assert!(!comparisons.is_empty());
    for c in comparisons {
        assert!(c.get("t_test").is_some() && c.get("pearson").is_some());
    }
    for mode in ["softmax", "gsoftmax"] {
        for seed in 1..=3 {
            let run = a.join(mode).join(format!("seed_{seed}"));
            for f in ["history.csv", "features.csv", "scatter.csv", "model.json", "report.json"] {
                assert!(run.join(f).is_file(), "{}", run.join(f).display());
            }
        }
    }
}

#[test]
fn run_output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", &BLOBS.replace("[1, 2, 3]", "[5]"));
    let out = dir.path().join("from_env");
    let res = Command::new(env!("CARGO_BIN_EXE_gsoftmax"))
        .args(["run", "--config", &cfg])
        .env("GSOFTMAX_OUT", &out)
        .output()
        .unwrap();
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert!(out.join("summary.json").is_file());
}

#[test]
fn run_error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = write(
        dir.path(),
        "missing.json",
        r#"{"dataset": {"kind": "cifar10", "train": ["/no/such/data_batch_1.bin"], "test": "/no/such/test_batch.bin"},
            "network": {"hidden_dims": []}, "loss_modes": ["softmax"],
            "schedule": {"kind": "constant", "rate": 0.01}, "optimizer": {"batch_size": 8},
            "epochs": 1, "seeds": [0]}"#,
    );
    let out = dir.path().join("o");
    assert_eq!(code(&gsoftmax(&["run", "--config", &missing, "--out", out.to_str().unwrap()])), 2);

    let unknown = write(dir.path(), "unknown.json", &BLOBS.replacen('{', r#"{"colour": "blue","#, 1));
    assert_eq!(code(&gsoftmax(&["run", "--config", &unknown, "--out", out.to_str().unwrap()])), 1);
    let no_file = dir.path().join("nope.json");
    assert_eq!(code(&gsoftmax(&["run", "--config", no_file.to_str().unwrap()])), 2);

    let diverging = write(dir.path(), "div.json", &BLOBS.replace("\"base_rate\": 0.05", "\"base_rate\": 1e6"));
    assert_eq!(code(&gsoftmax(&["run", "--config", &diverging, "--out", out.to_str().unwrap()])), 3);
}

#[test]
fn analyze_csv_and_json_agree() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("class_id,x_0\n");
    let mut rows = Vec::new();
    for c in 0..3 {
        for k in 0..8 {
            let v = c as f64 * 2.0 + (k as f64 - 3.5) * 0.1 * (c + 1) as f64;
            csv.push_str(&format!("{c},{v}\n"));
            rows.push(serde_json::json!({"class_id": c, "features": [v]}));
        }
    }
    let csv_path = write(dir.path(), "f.csv", &csv);
    let json_path = write(dir.path(), "f.json", &serde_json::to_string(&rows).unwrap());
    let a = gsoftmax(&["analyze", "--input", &csv_path]);
    let b = gsoftmax(&["analyze", "--input", &json_path]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let report: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(report["per_class"].as_array().unwrap().len(), 3);

    let out = dir.path().join("report");
    let res = gsoftmax(&["analyze", "--input", &csv_path, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&res), 0);
    let flat = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(flat.starts_with("class_id,mu,sigma,n,compactness,separability,ratio"));
    assert_eq!(flat.lines().count(), 4);
    assert!(out.join("report.json").is_file());

    let malformed = write(dir.path(), "bad.csv", "class_id,x_0\n0,abc\n");
    assert_eq!(code(&gsoftmax(&["analyze", "--input", &malformed])), 2);
    let one_sample = write(dir.path(), "one.csv", "class_id,x_0\n0,1.0\n1,2.0\n1,2.5\n");
    assert_eq!(code(&gsoftmax(&["analyze", "--input", &one_sample])), 3);
}

#[test]
fn metrics_from_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(
        dir.path(),
        "p.csv",
        "item_id,class_id,score,label\n\
         a,0,0.9,1\na,1,0.6,0\n\
         b,0,0.2,0\nb,1,0.8,1\n\
         c,0,0.7,0\nc,1,0.1,1\n",
    );
    let out = gsoftmax(&["metrics", "--input", &input]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    // class 0: ranks a(1) c(0) b(0) -> AP 1; class 1: b(1) a(0) c(1) -> (1 + 2/3) / 2
    let map = r["map"]["map"].as_f64().unwrap();
    assert!((map - (1.0 + 5.0 / 6.0) / 2.0).abs() < 1e-12);
    // predicted at 0.5: a0 a1 b1 c0 -> 2 correct of 4 predicted, 3 relevant
    assert!((r["prf"]["o_p"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert!((r["prf"]["o_r"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);

    assert_eq!(code(&gsoftmax(&["metrics", "--input", &input, "--threshold", "1.5"])), 3);
    let bad = write(dir.path(), "bad.csv", "item_id,class_id,score,label\na,0,0.9,yes\n");
    assert_eq!(code(&gsoftmax(&["metrics", "--input", &bad])), 2);
}
