use std::path::Path;
use std::process::{Command, Output};

use qmc_metrics::frechet::{gaussian_stats, PreparedReference};
use qmc_metrics::io;
use qmc_metrics::oracles::{generate_features, AffineGaussianGenerator, SamplerChoice};
use serde_json::Value;

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qmc-metrics"))
        .args(args)
        .current_dir(dir)
        .env("QMC_METRICS_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).trim().to_string()
}

fn write_oracle_files(dir: &Path) {
    let g = AffineGaussianGenerator::random(6, 6, 0.3, 0.1, 4).unwrap();
    let f = generate_features(&g, &SamplerChoice::Normal.latent(6, 1), 1, 4000).unwrap();
    io::save_features(dir.join("gen.fmat"), &f, io::Dtype::F64).unwrap();
    let r = generate_features(
        &AffineGaussianGenerator::scaled_identity(6, 1.0, vec![0.0; 6]).unwrap(),
        &SamplerChoice::Normal.latent(6, 2),
        1,
        5000,
    )
    .unwrap();
    io::save_features(dir.join("ref.fmat"), &r, io::Dtype::F32).unwrap();
}

#[test]
fn fid_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    write_oracle_files(dir.path());
    let out = cli(dir.path(), &["stats", "--features", "ref.fmat", "--out", "ref.gsta"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = cli(dir.path(), &["fid", "--gen", "gen.fmat", "--ref-stats", "ref.gsta"]);
    assert_eq!(out.status.code(), Some(0));
    let printed: f64 = stdout(&out).parse().unwrap();

    let features = io::load_features(dir.path().join("gen.fmat")).unwrap();
    let reference = io::load_stats(dir.path().join("ref.gsta")).unwrap();
    let expected = PreparedReference::new(reference.clone())
        .unwrap()
        .distance_to_sample(&gaussian_stats(&features).unwrap())
        .unwrap();
    assert_eq!(printed, expected);
    assert_eq!(printed, qmc_metrics::frechet_distance(&reference, &gaussian_stats(&features).unwrap()).unwrap());

    let out = cli(dir.path(), &["fid", "--gen", "gen.fmat", "--ref-stats", "ref.gsta", "--n", "1000", "--seed", "3"]);
    let printed: f64 = stdout(&out).parse().unwrap();
    assert_eq!(printed, qmc_metrics::fid_at_n(&features, &reference, 1000, 3).unwrap());

    // the resolved configuration goes to stderr as JSON
    let log: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).lines().next().unwrap()).unwrap();
    assert_eq!(log["command"], "fid");
    assert_eq!(log["config"]["seed"], 3);
}

#[test]
fn fid_infinity_json_reports_replicates() {
    let dir = tempfile::tempdir().unwrap();
    write_oracle_files(dir.path());
    cli(dir.path(), &["stats", "--features", "ref.fmat", "--out", "ref.gsta"]);
    let args = [
        "fid-infinity", "--gen", "gen.fmat", "--ref-stats", "ref.gsta", "--min-batch", "500", "--points", "8",
        "--replicates", "5", "--seed", "9", "--json", "out.json",
    ];
    let out = cli(dir.path(), &args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out.json")).unwrap()).unwrap();
    assert_eq!(v["schema"], 1);
    let intercepts: Vec<f64> = v["replicate_intercepts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    assert_eq!(intercepts.len(), 5);
    let mean = intercepts.iter().sum::<f64>() / 5.0;
    assert!((v["replicate_mean"].as_f64().unwrap() - mean).abs() < 1e-12);
    assert!(v["replicate_std"].as_f64().unwrap() > 0.0);
    assert_eq!(v["series"].as_array().unwrap().len(), 8);
    for key in ["intercept", "slope", "r_squared", "config"] {
        assert!(!v[key].is_null(), "{key}");
    }
    assert_eq!(v["config"]["infinity"]["pool_size"], 4000);
    assert_eq!(stdout(&out).parse::<f64>().unwrap(), mean);
}

#[test]
fn is_commands_on_csv_posteriors() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("p0,p1\n");
    for i in 0..400 {
        let p = ((i as f64) * 0.618).fract();
        text.push_str(&format!("{p},{}\n", 1.0 - p));
    }
    std::fs::write(dir.path().join("p.csv"), text).unwrap();
    let posteriors = io::load_posteriors(dir.path().join("p.csv")).unwrap();

    let out = cli(dir.path(), &["is", "--posteriors", "p.csv"]);
    assert_eq!(stdout(&out).parse::<f64>().unwrap(), qmc_metrics::inception_score(&posteriors));

    let out = cli(dir.path(), &["is", "--posteriors", "p.csv", "--splits", "4", "--seed", "2"]);
    let split = qmc_metrics::is_with_splits(&posteriors, 4, 2).unwrap();
    assert_eq!(stdout(&out), format!("{} {}", split.mean, split.std));

    let out = cli(dir.path(), &["is-infinity", "--posteriors", "p.csv", "--min-batch", "100", "--replicates", "3", "--json", "i.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(dir.path(), &["fid", "--gen", "missing.fmat", "--ref-stats", "r.gsta"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.fmat"));

    let out = cli(dir.path(), &["fid", "--gen", "a", "--ref-stats", "b", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    assert_eq!(cli(dir.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(cli(dir.path(), &["--help"]).status.code(), Some(0));

    std::fs::write(dir.path().join("bad.csv"), "1,2\n3\n").unwrap();
    let out = cli(dir.path(), &["is", "--posteriors", "bad.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.csv:2"));

    let out = cli(dir.path(), &["sample", "--kind", "sobol", "--dim", "5000", "--n", "4", "--out", "x.fmat"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sample_writes_the_library_points() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(dir.path(), &["sample", "--kind", "sobol", "--dim", "3", "--n", "64", "--seed", "5", "--out", "s.fmat"]);
    assert!(out.status.success());
    let (m, _) = io::load_fmat(dir.path().join("s.fmat")).unwrap();
    let spec = qmc_metrics::SamplerSpec::sobol(3, 5);
    assert_eq!(m, qmc_metrics::lds::unit_points(&spec, 1, 64).unwrap().points);

    cli(dir.path(), &["sample", "--kind", "sobol", "--dim", "1", "--n", "4", "--no-scramble", "--out", "u.fmat"]);
    let (m, _) = io::load_fmat(dir.path().join("u.fmat")).unwrap();
    let half = 0.5 / 4_294_967_296.0;
    assert_eq!(m.as_slice(), &[0.5 + half, 0.75 + half, 0.25 + half, 0.375 + half]);
}

#[test]
fn bias_study_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("study.json"),
        r#"{"samplers": ["normal", "sobol_inv"], "n_grid": [100, 200, 400], "replicates": 4, "seed": 2,
            "discrepancy_points": 0, "generator": {"kind": "scaled_identity", "dim": 4, "scale": 1.2}}"#,
    )
    .unwrap();
    let out = cli(
        dir.path(),
        &["bias-study", "--oracle", "gaussian", "--config", "study.json", "--out-csv", "s.csv", "--out-json", "s.json"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "sampler,n,replicate,score");
    assert_eq!(csv.lines().count(), 1 + 2 * 3 * 4);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.json")).unwrap()).unwrap();
    assert!((v["truth"]["true_fid"].as_f64().unwrap() - 4.0 * 0.04).abs() < 1e-12);
    assert_eq!(v["report"]["f_values"].as_array().unwrap().len(), 1);

    std::fs::write(dir.path().join("bad.json"), r#"{"replicates": 4, "unknown": 1}"#).unwrap();
    let out = cli(dir.path(), &["bias-study", "--oracle", "gaussian", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
}
