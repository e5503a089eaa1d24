//! End-to-end runs of the `fermipca` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fermipca"))
        .args(args)
        .env("RUST_LOG", "info")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Four real unit vectors in R^3 whose centered covariance has a clear spectrum.
fn write_dataset(dir: &TempDir) -> PathBuf {
    let path = p(dir, "data.csv");
    fs::write(&path, "x_0,x_1,x_2\n1,0,0\n0,1,0\n0.6,0.8,0\n0,0.6,0.8\n0.8,0,0.6\n").unwrap();
    path
}

/// Model with covariance diag(2, 1) written directly in the model format.
fn write_diag_model(dir: &TempDir, spectrum: &[f64]) -> PathBuf {
    let d = spectrum.len();
    let zero = [0.0, 0.0];
    let matrix: Vec<Vec<[f64; 2]>> = (0..d)
        .map(|i| (0..d).map(|j| if i == j { [spectrum[i], 0.0] } else { zero }).collect())
        .collect();
    let vectors: Vec<Vec<[f64; 2]>> = (0..d)
        .map(|j| (0..d).map(|i| if i == j { [1.0, 0.0] } else { zero }).collect())
        .collect();
    let model = serde_json::json!({
        "dim": d,
        "centered": false,
        "matrix": matrix,
        "eigenvalues": spectrum,
        "eigenvectors": vectors,
        "total_variance": spectrum.iter().sum::<f64>(),
    });
    let path = p(dir, "diag.json");
    fs::write(&path, model.to_string()).unwrap();
    path
}

#[test]
fn build_two_orthonormal_vectors() {
    let dir = TempDir::new().unwrap();
    let data = p(&dir, "two.csv");
    fs::write(&data, "re_0,im_0,re_1,im_1\n1,0,0,0\n0,0,1,0\n").unwrap();
    let model = p(&dir, "model.json");
    ok(&["build", "--input", s(&data), "--uncentered", "--out", s(&model)]);
    let m = json(&model);
    for v in m["eigenvalues"].as_array().unwrap() {
        assert!((v.as_f64().unwrap() - 0.5).abs() < 1e-12);
    }
    assert!(m["manifest"]["hash"].as_str().unwrap().len() == 64);
}

#[test]
fn build_single_vector_warns_and_yields_zero_model() {
    let dir = TempDir::new().unwrap();
    let data = p(&dir, "one.csv");
    fs::write(&data, "x_0,x_1\n0.6,0.8\n").unwrap();
    let model = p(&dir, "model.json");
    let out = ok(&["build", "--input", s(&data), "--out", s(&model)]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("single vector"));
    assert_eq!(json(&model)["total_variance"].as_f64().unwrap(), 0.0);
}

#[test]
fn malformed_csv_exits_2_with_line_number() {
    let dir = TempDir::new().unwrap();
    let data = p(&dir, "bad.csv");
    fs::write(&data, "x_0,x_1\n1,0\n0,oops\n").unwrap();
    let out = run(&["build", "--input", s(&data), "--out", s(&p(&dir, "m.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn exact_rank_threshold_on_two_mode_model() {
    let dir = TempDir::new().unwrap();
    let model = write_diag_model(&dir, &[2.0, 1.0]);
    for t2 in [1.0, 2.5] {
        let out = p(&dir, "th.json");
        let t2s = t2.to_string();
        ok(&[
            "calibrate",
            "--model",
            s(&model),
            "--mode",
            "rank",
            "--exact",
            "--t1",
            "0.05",
            "--t2",
            &t2s,
            "--out",
            s(&out),
        ]);
        let beta = json(&out)["entries"][0]["beta"].as_f64().unwrap();
        assert!((beta - 1.5 / t2).abs() < 1e-10, "{beta}");
    }
}

#[test]
fn planned_sample_count_is_logged() {
    let dir = TempDir::new().unwrap();
    let model = write_diag_model(&dir, &[0.4, 0.3, 0.2, 0.1]);
    let out = ok(&[
        "calibrate",
        "--model",
        s(&model),
        "--mode",
        "rank",
        "--eta",
        "0.1",
        "--delta-fail",
        "0.05",
        "--seed",
        "3",
        "--out",
        s(&p(&dir, "th.json")),
        "--density-csv",
        s(&p(&dir, "density.csv")),
    ]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("planned S = 2952"));
    let th = json(&p(&dir, "th.json"));
    assert_eq!(th["source"]["S"].as_u64(), Some(2952));
    let csv = fs::read_to_string(p(&dir, "density.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# manifest "));
    assert_eq!(lines.next(), Some("q,f_C"));
    assert_eq!(lines.count(), 512);
}

#[test]
fn plan_subcommand_reports_samples() {
    let out = ok(&[
        "plan",
        "--task",
        "fixed-rank",
        "--k",
        "1",
        "--d",
        "4",
        "--eta",
        "0.1",
        "--delta-fail",
        "0.05",
    ]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["samples"].as_u64(), Some(2312));
    let out = ok(&[
        "plan",
        "--task",
        "fractional",
        "--d",
        "4",
        "--eta",
        "0.1",
        "--delta-fail",
        "0.05",
    ]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["samples"].as_u64(), Some(185));
}

#[test]
fn fixed_variance_on_flat_spectrum_matches_inversion() {
    // every mode shares m = sigmoid((lambda c - 1)/T'), so theta = m and
    // lambda = (1 + T' logit(theta)) / c
    let dir = TempDir::new().unwrap();
    let c = 0.25;
    let model = write_diag_model(&dir, &[c; 4]);
    let out = p(&dir, "fv.json");
    for theta in [0.5f64, 0.8] {
        let th = theta.to_string();
        ok(&[
            "calibrate",
            "--model",
            s(&model),
            "--mode",
            "fixed-variance",
            "--exact",
            "--theta",
            &th,
            "--t-prime",
            "0.1",
            "--out",
            s(&out),
        ]);
        let lambda = json(&out)["lambda"].as_f64().unwrap();
        let expected = (1.0 + 0.1 * (theta / (1.0 - theta)).ln()) / c;
        assert!((lambda - expected).abs() < 1e-9, "{lambda} vs {expected}");
    }
    // sampled bisection lands within a few standard errors
    ok(&[
        "calibrate",
        "--model",
        s(&model),
        "--mode",
        "fixed-variance",
        "--theta",
        "0.5",
        "--t-prime",
        "0.1",
        "--samples",
        "200000",
        "--steps",
        "20",
        "--seed",
        "5",
        "--out",
        s(&out),
    ]);
    let v = json(&out);
    let achieved = v["normalized_retained_variance"].as_f64().unwrap();
    assert!((achieved - 0.5).abs() < 0.01, "{achieved}");
}

fn calibrated(dir: &TempDir) -> (PathBuf, PathBuf, PathBuf) {
    let data = write_dataset(dir);
    let model = p(dir, "model.json");
    ok(&["build", "--input", s(&data), "--out", s(&model)]);
    let th = p(dir, "th.json");
    ok(&[
        "calibrate",
        "--model",
        s(&model),
        "--mode",
        "rank",
        "--samples",
        "20000",
        "--seed",
        "11",
        "--out",
        s(&th),
    ]);
    let inputs = p(dir, "inputs.csv");
    fs::write(&inputs, "x_0,x_1,x_2\n1,0,0\n0,0,1\n0.6,0,0.8\n").unwrap();
    (model, th, inputs)
}

#[test]
fn score_is_deterministic_and_nested() {
    let dir = TempDir::new().unwrap();
    let (model, th, inputs) = calibrated(&dir);
    let a = p(&dir, "a.json");
    let b = p(&dir, "b.json");
    ok(&[
        "score",
        "--model",
        s(&model),
        "--thresholds",
        s(&th),
        "--inputs",
        s(&inputs),
        "--out",
        s(&a),
    ]);
    let first = fs::read(&a).unwrap();
    ok(&[
        "score",
        "--model",
        s(&model),
        "--thresholds",
        s(&th),
        "--inputs",
        s(&inputs),
        "--out",
        s(&a),
    ]);
    assert_eq!(first, fs::read(&a).unwrap());

    let report = json(&a);
    for rec in report["records"].as_array().unwrap() {
        let scores: Vec<f64> = rec["scores"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| s["s_bar"].as_f64().unwrap())
            .collect();
        assert!(scores.windows(2).all(|w| w[0] <= w[1] + 1e-12), "{scores:?}");
        assert!(rec["profile"]["pi"].is_array());
    }

    // Monte Carlo agrees with exact scores, and is reproducible across thread counts
    let mc = |threads: &str, out: &Path| {
        let o = Command::new(env!("CARGO_BIN_EXE_fermipca"))
            .args([
                "score",
                "--model",
                s(&model),
                "--thresholds",
                s(&th),
                "--inputs",
                s(&inputs),
            ])
            .args(["--shots", "100000", "--seed", "9", "--out", s(out)])
            .env("FERMIPCA_THREADS", threads)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    mc("1", &b);
    let one = fs::read(&b).unwrap();
    mc("4", &b);
    assert_eq!(one, fs::read(&b).unwrap());
    let sampled = json(&b);
    for (er, sr) in report["records"]
        .as_array()
        .unwrap()
        .iter()
        .zip(sampled["records"].as_array().unwrap())
    {
        for (e, m) in er["scores"]
            .as_array()
            .unwrap()
            .iter()
            .zip(sr["scores"].as_array().unwrap())
        {
            let exact = e["s_bar"].as_f64().unwrap();
            let est = m["s_bar"].as_f64().unwrap();
            let sigma = (exact * (1.0 - exact) / 100000.0).sqrt().max(1e-6);
            assert!((est - exact).abs() < 3.0 * sigma + 1e-9, "{est} vs {exact}");
        }
    }
}

#[test]
fn mean_input_gives_degenerate_record() {
    let dir = TempDir::new().unwrap();
    let (model, th, _) = calibrated(&dir);
    let mean = json(&model)["mean_vector"].clone();
    let inputs = p(&dir, "inputs.json");
    fs::write(
        &inputs,
        serde_json::json!({ "vectors": [mean, [1.0, 0.0, 0.0]] }).to_string(),
    )
    .unwrap();
    for shots in ["0", "1000"] {
        let out = p(&dir, "score.json");
        let res = ok(&[
            "score",
            "--model",
            s(&model),
            "--thresholds",
            s(&th),
            "--inputs",
            s(&inputs),
            "--shots",
            shots,
            "--out",
            s(&out),
        ]);
        assert!(String::from_utf8_lossy(&res.stderr).contains("coincide with the mean"));
        let records = json(&out)["records"].clone();
        assert_eq!(records[0]["degenerate"], Value::Bool(true));
        assert!(records[0]["nu"].as_f64().unwrap() < 1e-24);
        assert!(records[0]["scores"][0]["s_bar"].is_null());
        assert_eq!(records[1]["degenerate"], Value::Bool(false));
    }
}

#[test]
fn config_mismatch_is_rejected() {
    let dir = TempDir::new().unwrap();
    let (model, th, inputs) = calibrated(&dir);
    let out = run(&[
        "score",
        "--model",
        s(&model),
        "--thresholds",
        s(&th),
        "--inputs",
        s(&inputs),
        "--t1",
        "0.07",
        "--out",
        s(&p(&dir, "r.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn model_round_trip_preserves_eigenvalues() {
    let dir = TempDir::new().unwrap();
    let data = write_dataset(&dir);
    let model = p(&dir, "model.json");
    ok(&["build", "--input", s(&data), "--out", s(&model)]);
    let file: fermipca::io::ModelFile = serde_json::from_value(json(&model)).unwrap();
    let back = file.to_model().unwrap();
    for (a, b) in back.eigenvalues().iter().zip(&file.eigenvalues) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(
        fermipca::io::read_model(&model).unwrap().fingerprint(),
        back.fingerprint()
    );
}

#[test]
fn profile_density_and_trotter_emit_outputs() {
    let dir = TempDir::new().unwrap();
    let (model, _, inputs) = calibrated(&dir);
    let th = p(&dir, "exact.json");
    ok(&[
        "calibrate",
        "--model",
        s(&model),
        "--mode",
        "rank",
        "--exact",
        "--out",
        s(&th),
    ]);
    let prof = p(&dir, "profile.json");
    ok(&[
        "profile",
        "--model",
        s(&model),
        "--thresholds",
        s(&th),
        "--inputs",
        s(&inputs),
        "--out",
        s(&prof),
    ]);
    for rec in json(&prof)["records"].as_array().unwrap() {
        let pi: f64 = rec["profile"]["per_mode_probability"]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_f64().unwrap())
            .sum();
        assert!((pi - 1.0).abs() < 1e-9);
    }

    let dens = p(&dir, "density.csv");
    ok(&[
        "density",
        "--model",
        s(&model),
        "--probe",
        "mixed",
        "--points",
        "64",
        "--out",
        s(&dens),
    ]);
    assert_eq!(fs::read_to_string(&dens).unwrap().lines().count(), 66);

    let trot = p(&dir, "trotter.csv");
    let out = ok(&[
        "trotter-check",
        "--model",
        s(&model),
        "--rounds",
        "16,32,64,128",
        "--out",
        s(&trot),
    ]);
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((summary["slope"].as_f64().unwrap() + 1.0).abs() < 0.05);
}

#[test]
fn exit_codes_separate_validation_from_numeric_failure() {
    let dir = TempDir::new().unwrap();
    let model = write_diag_model(&dir, &[0.25; 4]);
    // the uncentered model carries no mean branch
    let res = run(&["trotter-check", "--model", s(&model), "--out", s(&p(&dir, "t.csv"))]);
    assert_eq!(res.status.code(), Some(2));
    // a flat spectrum at vanishing temperature collapses every rank threshold onto one value
    let res = run(&[
        "calibrate",
        "--model",
        s(&model),
        "--mode",
        "rank",
        "--exact",
        "--t1",
        "1e-300",
        "--out",
        s(&p(&dir, "th.json")),
    ]);
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
}
