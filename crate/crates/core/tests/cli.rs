//! End-to-end checks of the `wvlab` binary: exit codes, flags and the
//! output-directory override.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn wvlab(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_wvlab"));
    cmd.args(args).env_remove("WVLAB_OUT_DIR").env("RUST_LOG", "warn");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const SMALL: &str = r#"{
  "grid": {"x_min": -15, "x_max": 15, "n": 128},
  "initial_state": {"kind": "gaussian", "center": 0, "width": 1, "momentum": 0.5},
  "propagator": {"dt": 0.01},
  "duration": 0.5,
  "ensemble": {"n": 64, "seed": 4},
  "task": {"kind": "trajectories"}
}"#;

#[test]
fn propagate_succeeds_and_lists_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = wvlab(
        &[
            "propagate",
            "--config",
            scenario("propagate_free_gaussian.json").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    for f in manifest["outputs"].as_array().unwrap() {
        assert!(out.join(f.as_str().unwrap()).exists());
    }
}

#[test]
fn unknown_key_exits_2_with_suggestion() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", &SMALL.replace("\"width\"", "\"widht\""));
    let o = wvlab(&["trajectories", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("widht") && err.contains("`width`"), "{err}");
}

#[test]
fn missing_config_and_task_mismatch_exit_2() {
    assert_eq!(wvlab(&["work"], &[]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    let o = wvlab(&["propagate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numeric_failure_exits_3_and_leaves_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace(r#"{"kind": "trajectories"}"#, r#"{"kind": "dwell", "region": [-2, 2]}"#);
    let cfg = write(dir.path(), "c.json", &text);
    let out = dir.path().join("out");
    let o = wvlab(&["dwell", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), 0);
}

#[test]
fn environment_sets_output_directory_and_seed_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    let out = dir.path().join("from-env");
    let o = wvlab(&["trajectories", "--config", cfg.to_str().unwrap(), "--seed", "99"], &[("WVLAB_OUT_DIR", &out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 99);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    let (a, b) = (dir.path().join("one"), dir.path().join("four"));
    for (out, threads) in [(&a, "1"), (&b, "4")] {
        let o = wvlab(
            &["trajectories", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", threads],
            &[],
        );
        assert!(o.status.success());
    }
    for f in ["trajectories.csv", "equivariance.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn validate_exit_codes_follow_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ok");
    let o = wvlab(&["validate", "--only", "6,7", "--out", out.to_str().unwrap()], &[]);
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("[PASS]")).count(), 2, "{stdout}");

    let text = std::fs::read_to_string(scenario("validate.json"))
        .unwrap()
        .replace(r#""tolerance_scale": {}"#, r#""tolerance_scale": {"6": 0.0}"#)
        .replace(r#""only": []"#, r#""only": [6, 7]"#);
    let cfg = write(dir.path(), "v.json", &text);
    let out = dir.path().join("tampered");
    let o = wvlab(&["validate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("[FAIL] criterion  6")), "{stdout}");
    assert!(stdout.lines().any(|l| l.starts_with("[PASS] criterion  7")), "{stdout}");
}
