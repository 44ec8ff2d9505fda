//! End-to-end tests of the qbr binary: pipelines, exit codes, and agreement
//! with direct library calls.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qbr::quantize::{ClampMode, QuantizedDataset, ResolvedRanges};

fn qbr_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qbr"))
}

fn run(args: &[&str]) -> Output {
    qbr_bin().args(args).output().expect("binary runs")
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("qbr-cli-test-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_csv(path: &Path, n: usize, d: usize, seed: u64) -> (ndarray::Array2<f64>, ndarray::Array1<f64>) {
    use qbr::rng::StreamKey;
    use rand::Rng;
    let mut rng = StreamKey::new(seed).rng();
    let x = ndarray::Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0));
    let y = ndarray::Array1::from_shape_fn(n, |i| {
        0.8 * x[(i, 0)] - 0.3 * x[(i, d - 1)] + 0.2 * rng.gen_range(-1.0..1.0)
    });
    let mut text = String::new();
    for i in 0..n {
        for j in 0..d {
            text.push_str(&format!("{},", x[(i, j)]));
        }
        text.push_str(&format!("{}\n", y[i]));
    }
    std::fs::write(path, text).unwrap();
    (x, y)
}

#[test]
fn quantize_then_fit_matches_library() {
    let dir = temp_dir("fit");
    let csv = dir.join("data.csv");
    let qbrfile = dir.join("data.qbr");
    let (x, y) = write_csv(&csv, 400, 3, 99);

    let out = run(&[
        "quantize",
        "--input",
        csv.to_str().unwrap(),
        "--R",
        "1",
        "--L",
        "2",
        "--seed",
        "7",
        "--out",
        qbrfile.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let out = run(&["fit", qbrfile.to_str().unwrap()]);
    assert!(out.status.success());
    let cli_fit: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();

    // the same fit computed directly through the library, bit for bit
    let ranges = ResolvedRanges::from_rl(1.0, 2.0).unwrap();
    let ds = QuantizedDataset::from_raw(x.view(), y.view(), ranges, 7, ClampMode::Clamp).unwrap();
    let lib_fit = qbr::regress::fit_quantized(&ds, 0.95).unwrap();
    let lib_json = serde_json::to_value(&lib_fit).unwrap();
    assert_eq!(cli_fit["beta"], lib_json["beta"]);
    assert_eq!(cli_fit["se"], lib_json["se"]);
    assert_eq!(cli_fit["minEig"], lib_json["minEig"]);
    assert_eq!(cli_fit["n"], serde_json::json!(400));
}

#[test]
fn truncated_qbr_gives_data_exit_code() {
    let dir = temp_dir("trunc");
    let csv = dir.join("data.csv");
    let qbrfile = dir.join("data.qbr");
    write_csv(&csv, 50, 2, 5);
    let out = run(&[
        "quantize",
        "--input",
        csv.to_str().unwrap(),
        "--R",
        "1",
        "--L",
        "2",
        "--seed",
        "1",
        "--out",
        qbrfile.to_str().unwrap(),
    ]);
    assert!(out.status.success());

    let bytes = std::fs::read(&qbrfile).unwrap();
    std::fs::write(&qbrfile, &bytes[..bytes.len() - 9]).unwrap();
    let out = run(&["fit", qbrfile.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("truncated"), "stderr: {err}");
    let parsed: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(parsed["error"]["code"], 2);
}

#[test]
fn missing_seed_is_usage_error() {
    let dir = temp_dir("usage");
    let csv = dir.join("data.csv");
    let qbrfile = dir.join("data.qbr");
    write_csv(&csv, 10, 2, 5);
    let out = run(&[
        "quantize",
        "--input",
        csv.to_str().unwrap(),
        "--R",
        "1",
        "--L",
        "2",
        "--out",
        qbrfile.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    // no side effects on usage error
    assert!(!qbrfile.exists());
}

#[test]
fn help_works_for_every_subcommand() {
    for sub in ["quantize", "moments", "fit", "sketch", "likelihood", "sim"] {
        let out = run(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "help for {sub}");
        assert!(!out.stdout.is_empty());
    }
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn moments_json_is_row_major_with_metadata() {
    let dir = temp_dir("moments");
    let csv = dir.join("data.csv");
    let qbrfile = dir.join("data.qbr");
    write_csv(&csv, 100, 2, 12);
    run(&[
        "quantize",
        "--input",
        csv.to_str().unwrap(),
        "--R",
        "1",
        "--L",
        "2",
        "--seed",
        "3",
        "--out",
        qbrfile.to_str().unwrap(),
    ]);
    let out = run(&["moments", qbrfile.to_str().unwrap()]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["n"], 100);
    assert_eq!(v["d"], 2);
    assert_eq!(v["sigma_hat"].as_array().unwrap().len(), 2);
    assert_eq!(v["sigma_hat"][0].as_array().unwrap().len(), 2);
    assert_eq!(v["sigma_xy_hat"].as_array().unwrap().len(), 2);
    assert!(v["ranges"].is_object());
}

#[test]
fn sketch_subcommand_writes_reduced_dataset() {
    let dir = temp_dir("sketch");
    let csv = dir.join("data.csv");
    let qbrfile = dir.join("sketched.qbr");
    write_csv(&csv, 200, 3, 21);
    let out = run(&[
        "sketch",
        "--input",
        csv.to_str().unwrap(),
        "--m",
        "50",
        "--kind",
        "ternary",
        "--seed",
        "9",
        "--R",
        "2.5",
        "--L",
        "4",
        "--out",
        qbrfile.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let ds = qbr::format::read_dataset::<f64>(&qbrfile).unwrap();
    assert_eq!(ds.n(), 50);
    assert_eq!(ds.d(), 3);
}

#[test]
fn lasso_fit_reports_support_and_debias_fields() {
    let dir = temp_dir("lasso");
    let csv = dir.join("data.csv");
    let qbrfile = dir.join("data.qbr");
    write_csv(&csv, 800, 4, 33);
    run(&[
        "quantize",
        "--input",
        csv.to_str().unwrap(),
        "--R",
        "1",
        "--L",
        "2",
        "--seed",
        "4",
        "--out",
        qbrfile.to_str().unwrap(),
    ]);
    let out = run(&[
        "fit",
        qbrfile.to_str().unwrap(),
        "--lasso",
        "--lambda",
        "0.05",
        "--debias",
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["support"].is_array());
    assert!(v["betaDb"].as_array().unwrap().len() == 4);
    assert!(v["infNormResidual"].as_f64().unwrap() >= 0.0);
    assert!(v["converged"].as_bool().unwrap());
}

#[test]
fn likelihood_subcommand_reports_half_at_zero() {
    let out = run(&[
        "likelihood",
        "--beta",
        "0",
        "--sigma",
        "1",
        "--R",
        "2.5",
        "--L",
        "4",
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let pi = v["pi"].as_f64().unwrap();
    assert!((pi - 0.5).abs() < 1e-6, "pi {pi}");
    assert!(v["fisherInfo"].as_f64().unwrap() > 0.0);
}

#[test]
fn sim_runs_are_deterministic_across_threads() {
    let dir = temp_dir("sim");
    let config = dir.join("coverage.json");
    let scenario = serde_json::json!({
        "design": "BetaMix",
        "d": 4,
        "beta_star": [0.5, -0.8660254037844386, 0.8660254037844386, -0.5],
        "sigma": 0.7071067811865476,
        "n": 500,
        "ranges": {"Fixed": {"r": 1.0, "l": 6.0}},
        "seed": 11
    });
    std::fs::write(
        &config,
        serde_json::json!({"scenario": scenario, "reps": 8, "level": 0.95}).to_string(),
    )
    .unwrap();

    let mut outputs = Vec::new();
    for threads in ["1", "4", "4"] {
        let json_path = dir.join(format!("rep-{threads}-{}.json", outputs.len()));
        let csv_path = dir.join(format!("rep-{threads}-{}.csv", outputs.len()));
        let out = run(&[
            "sim",
            "coverage",
            "--config",
            config.to_str().unwrap(),
            "--threads",
            threads,
            "--out-json",
            json_path.to_str().unwrap(),
            "--out-csv",
            csv_path.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
        outputs.push((
            std::fs::read(&json_path).unwrap(),
            std::fs::read(&csv_path).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1], "1 vs 4 threads");
    assert_eq!(outputs[1], outputs[2], "repeat run");
}

#[test]
fn sim_transmission_reports_exact_ratio() {
    let dir = temp_dir("tx");
    let config = dir.join("tx.json");
    std::fs::write(
        &config,
        serde_json::json!({"n": 1_000_000u64, "d": 10u64, "rate_bps": 5e5, "m": 100_000u64}).to_string(),
    )
    .unwrap();
    let out = run(&["sim", "transmission", "--config", config.to_str().unwrap()]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["full64Seconds"].as_f64().unwrap(), 1408.0);
    assert_eq!(v["quantizedSeconds"].as_f64().unwrap(), 42.0);
    assert_eq!(v["ratioQuantizedToFull"].as_f64().unwrap(), 21.0 / 704.0);
}
