use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn smoothlab(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_smoothlab"));
    cmd.args(args).env_remove("SMOOTHLAB_OUT_DIR");
    if let Some(dir) = env_out {
        cmd.env("SMOOTHLAB_OUT_DIR", dir);
    }
    cmd.output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

const COUPLING: &str = r#"{"seed": 5, "trials": 200, "n": 8, "sigma": 0.25, "rounds": 4, "k": 8}"#;

#[test]
fn coupling_run_writes_summary_and_honours_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.json", COUPLING);
    let out_dir = tmp.path().join("run");
    let out = smoothlab(
        &["coupling", "--config", &cfg, "--trials", "30", "--seed", "9", "--out-dir", out_dir.to_str().unwrap(), "--assert"],
        None,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["trials"], 30);
    assert!(summary["rates"]["containment_failure"].is_object());
    assert!(summary["bounds"]["containment_failure"].is_number());
    let stored: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(stored["seed"], 9);
    assert_eq!(stored["kind"], "coupling");
    assert!(out_dir.join("traces/coupling.jsonl").is_file());
}

#[test]
fn default_output_directory_comes_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "d.json",
        r#"{"seed": 2, "trials": 3, "functions": 10, "per_function": 2, "sigma": 0.3, "alpha": 0.5,
            "delta": 0.05, "adversary": {"kind": "uniform"}}"#,
    );
    let out = smoothlab(&["dispersion", "--config", &cfg, "--parallelism", "2"], Some(tmp.path()));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("dispersion-seed2/summary.json").is_file());
}

#[test]
fn config_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("x");
    let dir = dir.to_str().unwrap();
    let bad_sigma = write(tmp.path(), "bad.json", r#"{"seed": 1, "trials": 2, "n": 8, "sigma": 2.0, "rounds": 2}"#);
    let wrong_kind = write(tmp.path(), "kind.json", &COUPLING.replace("{", r#"{"kind": "learning", "#));
    let not_json = write(tmp.path(), "junk.json", "n = 3");
    let good = write(tmp.path(), "good.json", COUPLING);
    for args in [
        vec!["coupling", "--config", &bad_sigma, "--out-dir", dir],
        vec!["learning", "--config", &wrong_kind, "--out-dir", dir],
        vec!["coupling", "--config", &not_json, "--out-dir", dir],
        vec!["coupling", "--config", "/nonexistent/file.json", "--out-dir", dir],
        vec!["coupling", "--config", &good, "--trials", "0", "--out-dir", dir],
        vec!["coupling", "--config", &good, "--parallelism", "0", "--out-dir", dir],
        vec!["coupling", "--bogus"],
        vec!["teleport"],
    ] {
        let out = smoothlab(&args, None);
        assert_eq!(code(&out), 1, "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    assert!(!Path::new(dir).exists());
    assert_eq!(code(&smoothlab(&["--help"], None)), 0);
}

#[test]
fn failing_check_exits_with_two_only_under_assert() {
    // A walk with a tiny bound fails almost immediately.
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "w.json",
        r#"{"seed": 1, "trials": 3, "n": 3, "rounds": 50, "algorithm": "self-balancing",
            "adversary": {"kind": "uniform-ball"}, "overrides": {"c": 0.5}}"#,
    );
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let out = smoothlab(&["discrepancy", "--config", &cfg, "--out-dir", a.to_str().unwrap(), "--assert"], None);
    assert_eq!(code(&out), 2);
    let out = smoothlab(&["discrepancy", "--config", &cfg, "--out-dir", b.to_str().unwrap()], None);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(a.join("summary.json")).unwrap(), fs::read(b.join("summary.json")).unwrap());
}

#[test]
fn lower_bound_subcommand_and_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "lb.json", r#"{"seed": 3, "trials": 4, "n": 3, "rounds": 60, "algorithm": "random-sign"}"#);
    let run = tmp.path().join("lb");
    let run = run.to_str().unwrap();
    assert_eq!(code(&smoothlab(&["discrepancy-lb", "--config", &cfg, "--out-dir", run], None)), 0);
    let report_path = tmp.path().join("report.json");
    let out = smoothlab(
        &["compare", run, run, "--metric", "final_l2_sq", "--seed", "4", "--out", report_path.to_str().unwrap()],
        None,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["ratio"], 1.0);
    assert_eq!(report["resamples"], 10_000);
    assert!(report_path.is_file());
    let out = smoothlab(&["compare", run, run, "--metric", "regret"], None);
    assert_eq!(code(&out), 1);
}
