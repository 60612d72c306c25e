//! End-to-end tests that drive the compiled `tailend` binary.
//!
//! Everything here goes through `std::process::Command` and temp
//! directories: files in, files out, exit codes, stderr. The one
//! exception is the composition test, which re-runs the same inference
//! through the library to pin the binary's output to it bit for bit.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tailend::{Analysis, SingletonPolicy, SpeedSample};

const TOY_CSV: &str = "\
athlete_id,time_s,wind,year
bolt,9.58,0.9,2009
bolt,9.63,1.5,2012
bolt,9.69,0.0,2008
bolt,9.72,1.7,2008
bolt,9.76,1.8,2012
bolt,9.77,-1.3,2013
gay,9.69,2.0,2009
gay,9.71,0.9,2009
gay,9.77,-0.4,2010
gay,9.79,1.0,2012
blake,9.69,-0.1,2012
blake,9.75,1.1,2012
blake,9.82,1.7,2011
powell,9.72,1.5,2008
powell,9.74,0.9,2012
powell,9.78,1.0,2010
gatlin,9.74,1.0,2015
gatlin,9.77,1.6,2014
gatlin,9.79,0.0,2012
kim,10.01,0.3,2017
";

const SCENARIO: &str = r#"{
  "p": 400,
  "m": 4,
  "seed": 42,
  "family": {
    "kind": "reverse-weibull",
    "groups": [
      { "athletes": 400, "endpoint": 36.0, "gamma": -0.25, "width": 4.0 }
    ]
  }
}"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    run_with_env(dir, args, &[])
}

fn run_with_env(dir: &Path, args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tailend"));
    cmd.current_dir(dir).args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("spawning the tailend binary")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Writes the toy CSV and runs `prepare`, leaving `sample.json` in `dir`.
fn prepare_toy(dir: &Path) {
    fs::write(dir.join("times.csv"), TOY_CSV).unwrap();
    let out = run(dir, &["prepare", "times.csv", "--cap", "5"]);
    assert_ok(&out);
}

#[test]
fn prepare_writes_sample_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    prepare_toy(tmp.path());

    assert!(tmp.path().join("sample.json").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("prepare_summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["rows_read"], 20);
    // bolt has six rows; the cap drops the slowest one.
    assert_eq!(summary["rows_kept"], 19);
    assert_eq!(summary["p"], 6);
    assert_eq!(summary["n"], 19);
    assert_eq!(summary["best_time_s"], 9.58);
    assert_eq!(summary["slowest_time_s"], 10.01);

    // The sample file is valid library input.
    let sample = SpeedSample::read_json(tmp.path().join("sample.json")).unwrap();
    assert_eq!(sample.n(), 19);
    assert_eq!(sample.p(), 6);
}

#[test]
fn estimate_matches_library_composition() {
    let tmp = tempfile::tempdir().unwrap();
    prepare_toy(tmp.path());
    let out = run(tmp.path(), &["estimate", "sample.json", "--k", "8"]);
    assert_ok(&out);

    // Same sample, same calls, straight through the library.
    let sample = SpeedSample::read_json(tmp.path().join("sample.json")).unwrap();
    let analysis = Analysis::new(sample, SingletonPolicy::Drop, 100.0).unwrap();
    let (expected, _) = analysis.infer_at(8, &[0.75, 0.95]).unwrap();

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("estimate.json")).unwrap())
            .unwrap();
    let got = &summary["result"];
    assert_eq!(got["gamma"], expected.gamma);
    assert_eq!(got["endpoint_time"], expected.endpoint_time);
    assert_eq!(got["delta"], expected.delta);
    assert_eq!(got["lcb_time"]["0.95"], expected.lcb_time["0.95"]);

    // The CSV mirror carries the same numbers through the float formatter.
    let csv = fs::read_to_string(tmp.path().join("estimate.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "k,gamma,endpoint_time,sigma2_iid,delta,lcb75_time,lcb95_time");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0].parse::<usize>().unwrap(), 8);
    assert_eq!(row[1].parse::<f64>().unwrap(), expected.gamma);
    assert_eq!(row[6].parse::<f64>().unwrap(), expected.lcb_time["0.95"]);
}

#[test]
fn conflicting_tail_size_flags_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    prepare_toy(tmp.path());
    let out = run(tmp.path(), &["estimate", "sample.json", "--k", "8", "--k-frac", "0.1"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("cannot be used with"));
}

#[test]
fn existing_outputs_are_protected_until_force() {
    let tmp = tempfile::tempdir().unwrap();
    prepare_toy(tmp.path());

    let out = run(tmp.path(), &["prepare", "times.csv"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("sample.json already exists"));
    assert!(stderr(&out).contains("--force"));

    let out = run(tmp.path(), &["--force", "prepare", "times.csv"]);
    assert_ok(&out);
}

#[test]
fn out_dir_env_is_used_and_flag_wins() {
    let tmp = tempfile::tempdir().unwrap();
    prepare_toy(tmp.path());

    let via_env = tmp.path().join("via_env");
    let out = run_with_env(
        tmp.path(),
        &["estimate", "sample.json", "--k", "8"],
        &[("TAILEND_OUT_DIR", via_env.to_str().unwrap())],
    );
    assert_ok(&out);
    assert!(via_env.join("estimate.json").exists());

    let via_flag = tmp.path().join("via_flag");
    let out = run_with_env(
        tmp.path(),
        &["--out-dir", via_flag.to_str().unwrap(), "estimate", "sample.json", "--k", "8"],
        &[("TAILEND_OUT_DIR", via_env.to_str().unwrap())],
    );
    assert_ok(&out);
    assert!(via_flag.join("estimate.json").exists());
    // The env-named directory saw no second write.
    assert!(!via_env.join("estimate.csv.tmp").exists());
}

#[test]
fn singleton_warning_reaches_stderr_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    prepare_toy(tmp.path());
    let out = run(tmp.path(), &["estimate", "sample.json", "--k", "8"]);
    assert_ok(&out);
    assert!(stderr(&out).contains("singletons-dropped"));

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("estimate.json")).unwrap())
            .unwrap();
    assert_eq!(summary["warnings"][0]["code"], "singletons-dropped");
}

#[test]
fn sweep_emits_aligned_tables() {
    let tmp = tempfile::tempdir().unwrap();
    prepare_toy(tmp.path());
    let out = run(tmp.path(), &["sweep", "sample.json", "--k-range", "0.3:0.5"]);
    assert_ok(&out);

    let sweep = fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    let fits = fs::read_to_string(tmp.path().join("tail_fits.csv")).unwrap();
    assert!(sweep.starts_with("k,gamma,endpoint_time,sigma2_iid,delta,lcb75_time,lcb95_time\n"));
    assert!(fits.starts_with("k,threshold,m1,m2,v_n,gamma,endpoint,scale\n"));
    // One fit row per sweep row, plus matching k columns.
    let sweep_ks: Vec<&str> =
        sweep.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    let fit_ks: Vec<&str> = fits.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(sweep_ks, fit_ks);
    assert!(!sweep_ks.is_empty());

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("sweep_summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["rows"], sweep_ks.len());
}

#[test]
fn malformed_k_range_is_a_clean_error() {
    let tmp = tempfile::tempdir().unwrap();
    prepare_toy(tmp.path());
    let out = run(tmp.path(), &["sweep", "sample.json", "--k-range", "0.05"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("MIN:MAX"));
}

#[test]
fn lambda_writes_curve_reference_and_meta() {
    let tmp = tempfile::tempdir().unwrap();
    prepare_toy(tmp.path());
    let out = run(tmp.path(), &["lambda", "sample.json", "--k", "8", "--grid", "25"]);
    assert_ok(&out);

    let curve = fs::read_to_string(tmp.path().join("lambda.csv")).unwrap();
    let reference = fs::read_to_string(tmp.path().join("lambda_reference.csv")).unwrap();
    assert!(curve.starts_with("u,lambda_hat\n"));
    assert!(reference.starts_with("u,lambda_ref\n"));
    assert_eq!(curve.lines().count(), 26);
    assert_eq!(reference.lines().count(), 26);

    // Both tables share the identical u column.
    let us = |s: &str| -> Vec<String> {
        s.lines().skip(1).map(|l| l.split(',').next().unwrap().to_string()).collect()
    };
    assert_eq!(us(&curve), us(&reference));

    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("lambda_meta.json")).unwrap())
            .unwrap();
    assert_eq!(meta["k"], 8);
    // kim is a singleton and the default policy drops them.
    assert_eq!(meta["p"], 5);
    assert_eq!(meta["n"], 18);
}

#[test]
fn rsurface_grid_is_square_and_ordered() {
    let tmp = tempfile::tempdir().unwrap();
    prepare_toy(tmp.path());
    let out = run(
        tmp.path(),
        &["rsurface", "sample.json", "--k", "8", "--grid", "5", "--grid-min", "0.2", "--grid-max", "1.0"],
    );
    assert_ok(&out);

    let surface = fs::read_to_string(tmp.path().join("rsurface.csv")).unwrap();
    let rows: Vec<&str> = surface.lines().collect();
    assert_eq!(rows[0], "x,y,r_hat");
    assert_eq!(rows.len(), 1 + 25);
    // Row-major: x varies slowest, and the corners land on the bounds.
    assert!(rows[1].starts_with("0.2,0.2,"));
    assert!(rows[25].starts_with("1,1,"));
    let first_x: Vec<&str> = rows[1..6].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(first_x, vec!["0.2"; 5]);
}

#[test]
fn extrapolate_meta_agrees_with_series() {
    let tmp = tempfile::tempdir().unwrap();
    prepare_toy(tmp.path());
    let out = run(tmp.path(), &["extrapolate", "sample.json", "--k", "8", "--max-rank", "10"]);
    assert_ok(&out);

    let csv = fs::read_to_string(tmp.path().join("extrapolation.csv")).unwrap();
    assert!(csv.starts_with("rank,transformed_rank,speed\n"));
    assert_eq!(csv.lines().count(), 11);

    let meta: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(tmp.path().join("extrapolation_meta.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(meta["k"], 8);
    assert_eq!(meta["max_rank"], 10);
    // The intercept is the endpoint in speed; the sidecar also carries it
    // as a time for convenience.
    let intercept = meta["intercept"].as_f64().unwrap();
    let endpoint_time = meta["endpoint_time"].as_f64().unwrap();
    assert!((endpoint_time - 360.0 / intercept).abs() < 1e-12);
}

#[test]
fn simulate_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("scenario.json"), SCENARIO).unwrap();

    for dir in ["a", "b"] {
        let out = run(
            tmp.path(),
            &[
                "--out-dir",
                dir,
                "simulate",
                "scenario.json",
                "--experiment",
                "lemma",
                "--n-grid",
                "800,1600",
                "--reps",
                "3",
            ],
        );
        assert_ok(&out);
    }

    for name in ["lemma_summary.json", "lemma_reps.csv"] {
        let a = fs::read(tmp.path().join("a").join(name)).unwrap();
        let b = fs::read(tmp.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn simulate_seed_flag_overrides_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("scenario.json"), SCENARIO).unwrap();

    let out = run(
        tmp.path(),
        &[
            "--out-dir", "s", "simulate", "scenario.json", "--experiment", "lemma",
            "--n-grid", "800", "--reps", "3", "--seed", "7",
        ],
    );
    assert_ok(&out);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("s/lemma_summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["seed"], 7);
    assert_eq!(summary["report"]["seed"], 7);
}

#[test]
fn bad_confidence_level_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    prepare_toy(tmp.path());
    let out = run(tmp.path(), &["estimate", "sample.json", "--k", "8", "--levels", "1.5"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("between 0 and 1"));
}

#[test]
fn missing_sample_file_is_a_clean_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["estimate", "nope.json", "--k", "8"]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.starts_with("error: "), "unexpected stderr: {err}");
    assert!(err.contains("nope.json"));
}
