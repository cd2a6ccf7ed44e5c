//! End-to-end runs of the `noise-oracle` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .display()
        .to_string()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noise-oracle"))
        .args(args)
        .env_remove("NOISE_ORACLE_THREADS")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn json(path: impl AsRef<Path>) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn out_dir(tmp: &TempDir, name: &str) -> String {
    tmp.path().join(name).display().to_string()
}

#[test]
fn gen_noise_writes_a_valid_matrix_and_its_manifest() {
    let tmp = TempDir::new().unwrap();
    let dir = out_dir(&tmp, "gen");
    ok(&["gen-noise", "--kind", "uniform", "--k", "10", "--epsilon", "0.5", "--out-dir", &dir]);
    let m = noise_oracle::NoiseMatrix::from_json(&fs::read_to_string(format!("{dir}/noise_matrix.json")).unwrap()).unwrap();
    assert_eq!(m.k(), 10);
    assert!(Path::new(&dir).join("manifest.json").exists());
}

#[test]
fn invalid_noise_level_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = run(&["gen-noise", "--kind", "uniform", "--k", "3", "--epsilon", "1.5", "--out-dir", &out_dir(&tmp, "x")]);
    assert_eq!(code(&out), 2);
}

#[test]
fn estimate_fixture_and_edge_cases() {
    let tmp = TempDir::new().unwrap();
    let pairs = tmp.path().join("pairs.tsv");
    fs::write(&pairs, "0\t0\n0\t1\n0\t1\n1\t1\n").unwrap();
    let dir = out_dir(&tmp, "est");
    ok(&["estimate", "--pairs", pairs.to_str().unwrap(), "--k", "2", "--out-dir", &dir]);
    let e = json(format!("{dir}/estimate.json"));
    let rows = e["rows"].as_array().unwrap();
    assert_eq!(rows[0][0].as_f64().unwrap(), 1.0 / 3.0);
    assert_eq!(rows[0][1].as_f64().unwrap(), 2.0 / 3.0);
    assert_eq!(rows[1][1].as_f64().unwrap(), 1.0);

    let empty = tmp.path().join("empty.tsv");
    fs::write(&empty, "").unwrap();
    let dir = out_dir(&tmp, "empty");
    ok(&["estimate", "--pairs", empty.to_str().unwrap(), "--k", "2", "--out-dir", &dir]);
    let e = json(format!("{dir}/estimate.json"));
    assert_eq!(e["empty_rows"], serde_json::json!([0, 1]));
    assert!(e["rows"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap()).all(|v| v.as_f64() == Some(0.0)));

    let bad = tmp.path().join("bad.tsv");
    fs::write(&bad, "0\t1\n0\t2\n").unwrap();
    let out = run(&["estimate", "--pairs", bad.to_str().unwrap(), "--k", "2", "--out-dir", &out_dir(&tmp, "bad")]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2"));
}

#[test]
fn identity_matrix_has_zero_expected_error() {
    let tmp = TempDir::new().unwrap();
    let dir = out_dir(&tmp, "ee");
    ok(&["expected-error", "--kind", "uniform", "--k", "4", "--epsilon", "0", "--scheme", "fixed", "--per-class", "5", "--out-dir", &dir]);
    assert_eq!(json(format!("{dir}/expected_error.json"))["total"].as_f64(), Some(0.0));
}

#[test]
fn sweep_csv_has_theory_and_empirical_columns() {
    let tmp = TempDir::new().unwrap();
    let dir = out_dir(&tmp, "sweep");
    ok(&[
        "--seed", "3", "sweep", "--kind", "uniform", "--k", "10", "--per-class", "20",
        "--epsilons", "0.1,0.3,0.5", "--repetitions", "200", "--out-dir", &dir,
    ]);
    let text = fs::read_to_string(format!("{dir}/sweep.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (mean, theory) = (col("empirical_mean_se"), col("theory_se"));
    let mut n = 0;
    for line in lines {
        let f: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert!((f[mean] - f[theory]).abs() / f[theory] < 0.1);
        n += 1;
    }
    assert_eq!(n, 3);
    assert!(Path::new(&dir).join("manifest.json").exists());
}

#[test]
fn missing_inputs_and_seeds_are_usage_errors() {
    let tmp = TempDir::new().unwrap();
    let out = run(&["estimate", "--pairs", "/nonexistent/pairs.tsv", "--k", "2", "--out-dir", &out_dir(&tmp, "a")]);
    assert_eq!(code(&out), 2);

    let out = run(&["simulate", "--kind", "uniform", "--k", "3", "--epsilon", "0.2", "--per-class", "5", "--out-dir", &out_dir(&tmp, "b")]);
    assert_eq!(code(&out), 2, "simulate needs a seed");

    let manifest = tmp.path().join("m.json");
    fs::write(&manifest, r#"{"out_dir": "unused", "command": {"subcommand": "train", "blobs": true}}"#).unwrap();
    let out = run(&["--manifest", manifest.to_str().unwrap(), "--out-dir", &out_dir(&tmp, "c")]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn quality_reports_and_rejects_unknown_label_sets() {
    let tmp = TempDir::new().unwrap();
    let corpus = tmp.path().join("four.tsv");
    fs::write(&corpus, "a\tPER\tPER\nb\tO\tPER\nc\tLOC\tO\nd\tORG\tORG\n").unwrap();
    let dir = out_dir(&tmp, "q");
    ok(&["quality", "--corpus", corpus.to_str().unwrap(), "--out-dir", &dir]);
    let q = json(format!("{dir}/quality.json"));
    for key in ["precision", "recall", "f1"] {
        assert_eq!(q[key].as_f64(), Some(2.0 / 3.0));
    }

    let perfect = tmp.path().join("perfect.tsv");
    fs::write(&perfect, "a\tPER\tPER\nb\tO\tO\nc\tLOC\tLOC\n").unwrap();
    let dir = out_dir(&tmp, "p");
    ok(&["quality", "--corpus", perfect.to_str().unwrap(), "--out-dir", &dir]);
    let q = json(format!("{dir}/quality.json"));
    for key in ["precision", "recall", "f1", "accuracy"] {
        assert_eq!(q[key].as_f64(), Some(1.0));
    }

    let out = run(&["quality", "--corpus", &fixture("noisyner_sample.tsv"), "--label-set", "nope", "--out-dir", &out_dir(&tmp, "u")]);
    assert_eq!(code(&out), 2);
}

#[test]
fn identity_noise_training_matches_clean_training() {
    let tmp = TempDir::new().unwrap();
    let train_corpus = fixture("toy_train.tsv");
    let mut accuracies = Vec::new();
    for layer in ["estimated", "none"] {
        let dir = out_dir(&tmp, layer);
        ok(&[
            "--seed", "17", "train", "--corpus", &train_corpus, "--label-sets", "noisy", "--per-class", "40",
            "--noise-layer", layer, "--epochs", "10", "--out-dir", &dir,
        ]);
        let eval_dir = out_dir(&tmp, &format!("{layer}-eval"));
        ok(&[
            "eval", "--model", &format!("{dir}/model.json"), "--test-corpus", &fixture("toy_test.tsv"),
            "--label-sets", "noisy", "--out-dir", &eval_dir,
        ]);
        for file in ["model.json", "trace.csv", "manifest.json"] {
            assert!(Path::new(&dir).join(file).exists(), "{file}");
        }
        accuracies.push(json(format!("{eval_dir}/eval.json"))["accuracy"].as_f64().unwrap());
    }
    assert_eq!(accuracies[0], accuracies[1]);
    assert!(accuracies[0] > 0.9, "{accuracies:?}");
}

#[test]
fn correlate_on_blobs_is_strongly_negative() {
    let tmp = TempDir::new().unwrap();
    let dir = out_dir(&tmp, "corr");
    ok(&["--seed", "42", "correlate", "--blobs", "--sizes", "5,10,25,50,100", "--repetitions", "10", "--out-dir", &dir]);
    let pearson = json(format!("{dir}/correlation.json"))["pearson"].as_f64().unwrap();
    assert!(pearson <= -0.8, "{pearson}");
    let csv = fs::read_to_string(format!("{dir}/correlation.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("grid,expected_se,mean_metric,std_metric"));
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn help_succeeds_and_unknown_flags_fail() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["simulate", "--bogus"])), 2);
}
