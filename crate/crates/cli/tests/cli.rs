use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nef_split::io_formats::{read_image, write_image};
use nef_split::{Image, ImageTensor, Shape};

fn run(dir: &Path, config: Option<&str>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nef-split"));
    cmd.current_dir(dir);
    if let Some(text) = config {
        fs::write(dir.join("config.json"), text).unwrap();
        cmd.args(["--config", "config.json"]);
    }
    cmd.args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

const SMALL: &str = r#"{"model":{"family":"gaussian","params":{"sigma":0.1}},"seed":4,
  "dataset":{"kind":"synthetic","train":4,"test":2,"height":8,"width":8},
  "train":{"step_size":0.5,"epochs":30},"alphas":[0.2,0.5],"moments":{"samples":2000}}"#;

fn clean_image(dir: &Path) {
    let x: Image = ImageTensor::new((0..48).map(|i| 0.1 + 0.8 * i as f64 / 47.0).collect(), Shape::grid(6, 8)).unwrap();
    write_image(&dir.join("clean.pfm"), &x).unwrap();
}

#[test]
fn verify_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = run(dir.path(), None, &["--out", "a", "--seed", "11", "verify", "--draws", "20000"]);
    let b = run(dir.path(), None, &["--out", "b", "--seed", "11", "verify", "--draws", "20000"]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(code(&b), 0);
    let ra = fs::read(dir.path().join("a/verify.json")).unwrap();
    assert_eq!(ra, fs::read(dir.path().join("b/verify.json")).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&ra).unwrap();
    assert_eq!(report["passed"], true);
    assert!(report["coverage"].as_object().unwrap().len() >= 20);
}

#[test]
fn invalid_configs_exit_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    clean_image(dir.path());
    let cases = [
        r#"{"model":{"family":"gaussian","params":{"sigma":0.1}},"alpha":1.5}"#,
        r#"{"model":{"family":"binomial","params":{"looks":4}},"alpha":0.3}"#,
        r#"{"model":{"family":"gaussian","params":{"sigma":0.0}}}"#,
        r#"{"model":{"family":"poisson","params":{"gain":1.0}},"loss":"gr2r_nll"}"#,
        r#"{"model":{"family":"gaussian","params":{"sigma":0.1}},"extra":1}"#,
        "not json",
    ];
    for (i, text) in cases.iter().enumerate() {
        for args in [vec!["verify"], vec!["corrupt", "--input", "clean.pfm"], vec!["train"]] {
            let out = format!("out{i}");
            let mut full = vec!["--out", out.as_str()];
            full.extend(&args);
            let o = run(dir.path(), Some(text), &full);
            assert_eq!(code(&o), 2, "case {i} {args:?}: {}", String::from_utf8_lossy(&o.stderr));
            assert!(!dir.path().join(&out).exists(), "case {i} wrote output");
        }
    }
}

#[test]
fn commands_needing_a_config_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), None, &["train"])), 2);
    assert_eq!(code(&run(dir.path(), Some(SMALL), &["--jobs", "0", "train"])), 2);
    let no_alphas = r#"{"model":{"family":"gaussian","params":{"sigma":0.1}}}"#;
    assert_eq!(code(&run(dir.path(), Some(no_alphas), &["--out", "s", "sweep-alpha"])), 2);
    assert!(!dir.path().join("s").exists());
}

#[test]
fn corrupt_is_deterministic_and_on_lattice() {
    let dir = tempfile::tempdir().unwrap();
    clean_image(dir.path());
    let cfg = r#"{"model":{"family":"poisson","params":{"gain":0.25}},"seed":9}"#;
    for out in ["a", "b"] {
        let o = run(dir.path(), Some(cfg), &["--out", out, "corrupt", "--input", "clean.pfm"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = fs::read(dir.path().join("a/noisy.pfm")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b/noisy.pfm")).unwrap());
    let y: Image = read_image(&dir.path().join("a/noisy.pfm")).unwrap();
    assert_eq!(y.shape(), Shape::grid(6, 8));
    assert!(y.iter().all(|v| (v / 0.25 - (v / 0.25).round()).abs() < 1e-6));
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("a/corrupt.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 9);

    let other = run(dir.path(), Some(cfg), &["--out", "c", "--seed", "10", "corrupt", "--input", "clean.pfm"]);
    assert_eq!(code(&other), 0);
    assert_ne!(a, fs::read(dir.path().join("c/noisy.pfm")).unwrap());
}

#[test]
fn split_writes_recombinable_halves() {
    let dir = tempfile::tempdir().unwrap();
    clean_image(dir.path());
    let cfg = r#"{"model":{"family":"poisson","params":{"gain":0.5}},"alpha":0.25}"#;
    assert_eq!(code(&run(dir.path(), Some(cfg), &["corrupt", "--input", "clean.pfm"])), 0);
    assert_eq!(code(&run(dir.path(), Some(cfg), &["split", "--input", "noisy.pfm"])), 0);
    let y: Image = read_image(&dir.path().join("noisy.pfm")).unwrap();
    let y1: Image = read_image(&dir.path().join("y1.pfm")).unwrap();
    let y2: Image = read_image(&dir.path().join("y2.pfm")).unwrap();
    for i in 0..y.len() {
        // Halves are stored in single precision.
        assert!((0.75 * y1[i] + 0.25 * y2[i] - y[i]).abs() < 1e-5 * (1.0 + y[i].abs()));
    }
}

#[test]
fn train_then_evaluate_reproduces_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let t = run(dir.path(), Some(SMALL), &["--out", "t", "train"]);
    assert_eq!(code(&t), 0, "{}", String::from_utf8_lossy(&t.stderr));
    let metrics = fs::read_to_string(dir.path().join("t/metrics.jsonl")).unwrap();
    let rec: serde_json::Value = serde_json::from_str(metrics.lines().next().unwrap()).unwrap();
    assert!(rec["wall_ms"].is_null());
    assert_eq!(rec["loss_curve"].as_array().unwrap().len(), 30);

    let t2 = run(dir.path(), Some(SMALL), &["--out", "t2", "train"]);
    assert_eq!(code(&t2), 0);
    assert_eq!(metrics, fs::read_to_string(dir.path().join("t2/metrics.jsonl")).unwrap());
    assert_eq!(
        fs::read(dir.path().join("t/estimator.json")).unwrap(),
        fs::read(dir.path().join("t2/estimator.json")).unwrap()
    );

    let e = run(dir.path(), Some(SMALL), &["--out", "e", "evaluate", "--estimator", "t/estimator.json"]);
    assert_eq!(code(&e), 0, "{}", String::from_utf8_lossy(&e.stderr));
    let ev: serde_json::Value =
        serde_json::from_str(fs::read_to_string(dir.path().join("e/metrics.jsonl")).unwrap().trim()).unwrap();
    assert_eq!(ev["psnr_db"], rec["psnr_db"]);

    let timed = run(dir.path(), Some(SMALL), &["--out", "w", "--timing", "train"]);
    assert_eq!(code(&timed), 0);
    let rec: serde_json::Value =
        serde_json::from_str(fs::read_to_string(dir.path().join("w/metrics.jsonl")).unwrap().trim()).unwrap();
    assert!(rec["wall_ms"].is_u64());
}

#[test]
fn sweep_writes_one_row_per_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), Some(SMALL), &["--jobs", "2", "sweep-alpha"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "alpha,loss_name,psnr_db,seed");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("2.0000000000000001e-1,gr2r_mse,"));
}

#[test]
fn moments_and_inpaint_run() {
    let dir = tempfile::tempdir().unwrap();
    let m = run(dir.path(), Some(SMALL), &["moments"]);
    assert_eq!(code(&m), 0, "{}", String::from_utf8_lossy(&m.stderr));
    let rep: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("moments.json")).unwrap()).unwrap();
    assert!(rep["residuals"].as_array().unwrap().iter().all(|r| r.as_f64().unwrap() < 0.1));

    let i = run(dir.path(), Some(SMALL), &["--out", "ip", "inpaint"]);
    assert_eq!(code(&i), 0, "{}", String::from_utf8_lossy(&i.stderr));
    assert!(dir.path().join("ip/estimator.json").exists());
}

#[test]
fn numeric_failures_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let diverge = SMALL.replace(r#""step_size":0.5"#, r#""step_size":1e6"#);
    assert_eq!(code(&run(dir.path(), Some(&diverge), &["--out", "d", "train"])), 4);
    let stuck = SMALL.replace(r#""samples":2000"#, r#""samples":2000,"max_iters":0,"rel_tol":1e-9"#);
    assert_eq!(code(&run(dir.path(), Some(&stuck), &["--out", "m", "moments"])), 4);
}
