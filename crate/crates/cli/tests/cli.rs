use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tnml::mps::save;
use tnml::{LocalFeatureMap, MpsClassifier};

fn tnml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tnml"))
        .args(args)
        .env_remove("TNML_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn idx_images(n: usize, pixel: impl Fn(usize, usize, usize) -> u8) -> Vec<u8> {
    let mut b = Vec::new();
    for v in [2051u32, n as u32, 28, 28] {
        b.extend_from_slice(&v.to_be_bytes());
    }
    for k in 0..n {
        for r in 0..28 {
            for c in 0..28 {
                b.push(pixel(k, r, c));
            }
        }
    }
    b
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(&2049u32.to_be_bytes());
    b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    b.extend_from_slice(labels);
    b
}

/// Ten classes, each a bright horizontal band at its own height plus noise.
fn write_mnist_like(dir: &Path, n: usize, single_class: bool) {
    let labels: Vec<u8> = (0..n).map(|k| if single_class { 0 } else { (k % 10) as u8 }).collect();
    let images = idx_images(n, |k, r, c| {
        let band = labels[k] as usize * 2 + 4;
        let noise = ((k * 31 + r * 7 + c * 13) % 17) as u8;
        if r / 2 == band / 2 { 230 + noise } else { noise * 3 }
    });
    for stem in ["train", "t10k"] {
        std::fs::write(dir.join(format!("{stem}-images-idx3-ubyte")), &images).unwrap();
        std::fs::write(dir.join(format!("{stem}-labels-idx1-ubyte")), idx_labels(&labels)).unwrap();
    }
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn train_small(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["mnist-train", "--data-dir", p(data), "--out", p(out), "--m", "4", "--sweeps", "2", "--subset", "60"];
    args.extend_from_slice(extra);
    tnml(&args)
}

#[test]
fn train_writes_model_report_and_config() {
    let tmp = tempfile::tempdir().unwrap();
    write_mnist_like(tmp.path(), 80, false);
    let out = tmp.path().join("run");
    let res = train_small(tmp.path(), &out, &["--test-dir", p(tmp.path())]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report = std::fs::read_to_string(out.join("report.jsonl")).unwrap();
    let lines: Vec<Value> = report.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1]["test_error"].is_number());
    let config = json(out.join("config.json"));
    assert_eq!(config["args"]["m"], 4);
    assert_eq!(config["train_examples"], 60);
    assert_eq!(config["train_config"]["trunc"]["max_rank"], 4);

    // same code path as the trainer's final training error
    let eval = stdout_json(&tnml(&[
        "mnist-eval", "--model", p(&out.join("model.mpsc")), "--data-dir", p(tmp.path()), "--split", "train", "--subset", "60",
    ]));
    assert_eq!(eval["error_rate"].as_f64(), lines[1]["train_error"].as_f64());
    let wrong = eval["misclassified_count"].as_u64().unwrap();
    assert_eq!(wrong, (60.0 * eval["error_rate"].as_f64().unwrap()).round() as u64);
    let confusion: u64 = eval["confusion_matrix"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap()).map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(confusion, 60);
}

#[test]
fn identical_runs_give_identical_models() {
    let tmp = tempfile::tempdir().unwrap();
    write_mnist_like(tmp.path(), 60, false);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(train_small(tmp.path(), &a, &["--threads", "1"]).status.success());
    assert!(train_small(tmp.path(), &b, &["--threads", "2", "--deterministic"]).status.success());
    assert_eq!(std::fs::read(a.join("model.mpsc")).unwrap(), std::fs::read(b.join("model.mpsc")).unwrap());
}

#[test]
fn data_dir_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    write_mnist_like(tmp.path(), 40, false);
    let out = tmp.path().join("env");
    let res = Command::new(env!("CARGO_BIN_EXE_tnml"))
        .args(["mnist-train", "--out", p(&out), "--m", "3", "--sweeps", "1"])
        .env("TNML_DATA_DIR", tmp.path())
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(out.join("model.mpsc").is_file());
}

#[test]
fn missing_data_exits_two_without_partial_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("never");
    let res = tnml(&["mnist-train", "--data-dir", p(&tmp.path().join("absent")), "--out", p(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());
    let res = tnml(&["mnist-train", "--out", p(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn eval_refuses_a_map_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    write_mnist_like(tmp.path(), 60, false);
    let out = tmp.path().join("run");
    assert!(train_small(tmp.path(), &out, &[]).status.success());
    let model = out.join("model.mpsc");
    let res = tnml(&["mnist-eval", "--model", p(&model), "--data-dir", p(tmp.path()), "--map", "spin_coherent", "--d", "3"]);
    assert_eq!(res.status.code(), Some(2));
    let res = tnml(&["mnist-eval", "--model", p(&model), "--data-dir", p(tmp.path()), "--map", "half_angle", "--d", "2"]);
    assert!(res.status.success());
    let res = tnml(&["mnist-eval", "--model", p(&tmp.path().join("nope")), "--data-dir", p(tmp.path())]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn single_class_model_on_single_class_data_has_no_errors() {
    let tmp = tempfile::tempdir().unwrap();
    write_mnist_like(tmp.path(), 30, true);
    // all scores zero, so every prediction is the lowest label
    let m = MpsClassifier::<f64>::init_random(196, LocalFeatureMap::half_angle(), 10, 2, 0).unwrap();
    let sites = m.sites().iter().map(|s| s.scale(0.0)).collect();
    let zero = MpsClassifier::from_sites(sites, m.label_site(), 10, *m.map()).unwrap();
    let path = tmp.path().join("zero.mpsc");
    save(&zero, &path).unwrap();
    let eval = stdout_json(&tnml(&["mnist-eval", "--model", p(&path), "--data-dir", p(tmp.path())]));
    assert_eq!(eval["error_rate"], 0.0);
    assert_eq!(eval["misclassified_count"], 0);
}

#[test]
fn inspect_reports_caps_and_spectra() {
    let tmp = tempfile::tempdir().unwrap();
    let m = MpsClassifier::<f64>::init_random(8, LocalFeatureMap::half_angle(), 3, 5, 4).unwrap();
    let path = tmp.path().join("m.mpsc");
    save(&m, &path).unwrap();
    let s = stdout_json(&tnml(&["inspect", "--model", p(&path)]));
    let dims: Vec<u64> = s["bond_dims"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert_eq!(dims, vec![2, 4, 5, 5, 5, 4, 2]);
    assert_eq!(s["n_sites"], 8);
    let norm_sq = m.norm().powi(2);
    let spectra = s["singular_values"].as_array().unwrap();
    assert_eq!(spectra.len(), 7);
    for sv in spectra {
        let sv: Vec<f64> = sv.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        assert!(sv.windows(2).all(|w| w[0] >= w[1]) && sv.iter().all(|&x| x >= 0.0));
        let total: f64 = sv.iter().map(|x| x * x).sum();
        assert!((total - norm_sq).abs() <= 1e-8 * norm_sq.max(1.0));
    }
    std::fs::write(tmp.path().join("bad"), b"MPSC garbage").unwrap();
    assert_eq!(tnml(&["inspect", "--model", p(&tmp.path().join("bad"))]).status.code(), Some(2));
}

#[test]
fn toy_runs_are_reproducible_and_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let res = tnml(&["toy", "--task", "gaussians", "--d", "3", "--grid", "32", "--out", p(out)]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    for f in ["grid.csv", "points.csv", "metrics.json", "bayes.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let metrics = json(a.join("metrics.json"));
    assert!(metrics["bayes_disagreement"].as_f64().unwrap() < 0.5);
    let grid = std::fs::read_to_string(a.join("grid.csv")).unwrap();
    assert!(grid.starts_with("x1,x2,label,margin\n"));
    assert_eq!(grid.lines().count(), 32 * 32 + 1);

    let res = tnml(&["toy", "--task", "spiral", "--d", "6", "--n", "100", "--iters", "200", "--grid", "16", "--out", p(&tmp.path().join("s"))]);
    assert!(res.status.success());
    assert!(json(tmp.path().join("s/metrics.json"))["training_accuracy"].as_f64().unwrap() > 0.5);

    let bad = tmp.path().join("bad");
    assert_eq!(tnml(&["toy", "--task", "spiral", "--d", "1", "--out", p(&bad)]).status.code(), Some(2));
    assert!(!bad.exists());
}

#[test]
fn generative_scan_is_reproducible_and_checks_the_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let runs: Vec<PathBuf> = (0..2).map(|i| tmp.path().join(format!("g{i}"))).collect();
    for out in &runs {
        let res = tnml(&["generative", "--sizes", "30", "--trials", "1", "--grid", "64", "--iters", "50", "--seed", "3", "--out", p(out)]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    let csv = std::fs::read(runs[0].join("kl_scan.csv")).unwrap();
    assert_eq!(csv, std::fs::read(runs[1].join("kl_scan.csv")).unwrap());
    assert!(String::from_utf8(csv).unwrap().starts_with("N_s,mean_kl,std_kl\n30,"));
    let fit = json(runs[0].join("fit.json"));
    assert!(fit["sigma"].is_number() && fit["mean_kl"][0].as_f64().unwrap() >= 0.0);

    let low = tmp.path().join("low");
    assert_eq!(tnml(&["generative", "--grid", "32", "--out", p(&low)]).status.code(), Some(2));
    assert!(!low.exists());
}
