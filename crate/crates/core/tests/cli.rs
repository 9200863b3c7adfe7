use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rebalance"))
        .args(args)
        .env_remove("REBALANCE_SEED")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

/// Writes a small benchmark split into `dir` and returns the three paths.
fn data(dir: &Path) -> [String; 3] {
    ok(&[
        "synth",
        "--n",
        "2000",
        "--d",
        "6",
        "--class-prior",
        "0.75",
        "--split",
        "0.6,0.2,0.2",
        "--out",
        &path(dir),
    ]);
    ["train", "heldout", "test"].map(|p| path(&dir.join(format!("{p}.gemb"))))
}

#[test]
fn synth_writes_one_file_per_part() {
    let dir = tempfile::tempdir().unwrap();
    data(dir.path());
    for p in ["train", "heldout", "test"] {
        assert!(dir.path().join(format!("{p}.gemb")).is_file());
    }
    assert!(dir.path().join("manifest.json").is_file());
}

#[test]
fn help_lists_defaults() {
    let text = ok(&["self", "--help"]);
    for needle in [
        "es-disagreement",
        "[default: 100]",
        "[default: 0.1]",
        "[default: kl]",
    ] {
        assert!(text.contains(needle), "missing {needle} in help");
    }
    let top = ok(&["--help"]);
    for sub in [
        "synth",
        "train",
        "retrain",
        "dfr",
        "self",
        "free-lunch",
        "ablate",
        "eval",
        "verify-theorem",
    ] {
        assert!(top.contains(sub), "missing {sub}");
    }
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        vec!["bogus"],
        vec!["train", "--lr", "-1", "--data", "x.gemb"],
        vec![
            "self",
            "--variant",
            "nonsense",
            "--data",
            "a",
            "--heldout",
            "b",
            "--test",
            "c",
        ],
        vec!["verify-theorem", "--trials", "0"],
    ] {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn pipeline_errors_exit_1_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "dfr",
        "--heldout",
        &path(&dir.path().join("missing.gemb")),
        "--test",
        &path(&dir.path().join("missing.gemb")),
        "--out",
        &path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["error"].is_string());
    assert!(err["message"].is_string());
}

#[test]
fn verify_theorem_reports_without_violation() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path());
    ok(&[
        "verify-theorem",
        "--trials",
        "1000",
        "--seed",
        "7",
        "--out",
        &out,
    ]);
    let reports: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("theorem.json")).unwrap())
            .unwrap();
    let first = &reports[0];
    assert_eq!(first["seed"], 7);
    assert_eq!(first["trials"], 1000);
    assert!(first["max_abs_deviation"].as_f64().unwrap() < 1e-10);
    assert!(first["min_gap"].as_f64().unwrap() > 0.0);
}

#[test]
fn self_requests_exactly_n_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let [train, heldout, test] = data(&dir.path().join("data"));
    let out = dir.path().join("self");
    ok(&[
        "self",
        "--data",
        &train,
        "--heldout",
        &heldout,
        "--test",
        &test,
        "--n",
        "20",
        "--erm-lr",
        "0.1",
        "--erm-weight-decay",
        "0.03",
        "--lr",
        "0.01",
        "--out",
        &path(&out),
    ]);
    let r = report(&out);
    let seed = &r["per_seed"][0];
    assert_eq!(seed["extras"]["annotations_requested"], 20.0);
    assert_eq!(seed["annotations"]["class"], 20);
    assert_eq!(seed["annotations"]["group"], 0);
    let csv = fs::read_to_string(out.join("selection-seed0.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let [_, heldout, test] = data(&dir.path().join("data"));
    let cfg: PathBuf = dir.path().join("run.cfg");
    fs::write(&cfg, "# reference budget\nsteps = 40\nseed = 3\n").unwrap();
    let out = dir.path().join("dfr");
    ok(&[
        "dfr",
        "--config",
        &path(&cfg),
        "--heldout",
        &heldout,
        "--test",
        &test,
        "--seed",
        "4",
        "--out",
        &path(&out),
    ]);
    let r = report(&out);
    assert_eq!(r["seeds"][0], 4);
    assert_eq!(r["config"]["steps"], "40");

    fs::write(&cfg, "no-such-flag = 1\n").unwrap();
    let bad = run(&[
        "dfr",
        "--config",
        &path(&cfg),
        "--heldout",
        &heldout,
        "--test",
        &test,
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn seed_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_rebalance"))
        .args([
            "verify-theorem",
            "--trials",
            "10",
            "--out",
            &path(dir.path()),
        ])
        .env("REBALANCE_SEED", "11")
        .output()
        .unwrap();
    assert!(out.status.success());
    let reports: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("theorem.json")).unwrap())
            .unwrap();
    assert_eq!(reports[0]["seed"], 11);
}

#[test]
fn seeds_aggregate_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let [_, heldout, test] = data(&dir.path().join("data"));
    let out = dir.path().join("cb");
    ok(&[
        "retrain",
        "--heldout",
        &heldout,
        "--test",
        &test,
        "--seeds",
        "3,1,2",
        "--jobs",
        "2",
        "--out",
        &path(&out),
    ]);
    let r = report(&out);
    assert_eq!(r["seeds"], serde_json::json!([3, 1, 2]));
    assert_eq!(r["per_seed"].as_array().unwrap().len(), 3);
    assert_eq!(r["method"], "retrain-class-sampling");
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.starts_with("method,seed,group,accuracy,wga,avg"));
}

#[test]
fn train_then_eval_round_trips_the_head() {
    let dir = tempfile::tempdir().unwrap();
    let [train, _, test] = data(&dir.path().join("data"));
    let out = dir.path().join("erm");
    ok(&[
        "train",
        "--data",
        &train,
        "--test",
        &test,
        "--steps",
        "100",
        "--out",
        &path(&out),
    ]);
    let trained = report(&out);
    for f in [
        "head-seed0.ghed",
        "loss-seed0.csv",
        "checkpoint-seed0-0.1.ghed",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let eval_out = dir.path().join("eval");
    ok(&[
        "eval",
        "--head",
        &path(&out.join("head-seed0.ghed")),
        "--data",
        &test,
        "--out",
        &path(&eval_out),
    ]);
    let evaluated = report(&eval_out);
    assert_eq!(
        trained["per_seed"][0]["metrics"],
        evaluated["per_seed"][0]["metrics"]
    );
}
