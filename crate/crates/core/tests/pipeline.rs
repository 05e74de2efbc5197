//! Task pipelines driven through the library entry points.

use std::path::{Path, PathBuf};

use wvlab_core::harness::config::parse_config;
use wvlab_core::harness::run::run;
use wvlab_core::harness::ValidationReport;

fn scenario(name: &str) -> String {
    let p: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    std::fs::read_to_string(p).unwrap()
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn every_bundled_scenario_parses_and_round_trips() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut count = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let text = std::fs::read_to_string(entry.unwrap().path()).unwrap();
        let cfg = parse_config(&text).unwrap();
        let norm = cfg.normalized();
        assert_eq!(parse_config(&norm).unwrap().normalized(), norm);
        count += 1;
    }
    assert!(count >= 8);
}

#[test]
fn measure_smoke_agrees_with_exact_mode() {
    let cfg = parse_config(&scenario("measure_momentum_position.json")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let man = run(&cfg, dir.path()).unwrap();
    assert!(man.outputs.contains(&"experiments.jsonl".to_string()));
    let log = std::fs::read_to_string(dir.path().join("experiments.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1000);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["i", "y_k", "y_g", "post_selected", "weight"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    let est = read_json(&dir.path().join("estimator.json"));
    let exact = est["exact"]["value"].as_f64().unwrap();
    let mc = est["monte_carlo"]["value"].as_f64().unwrap();
    let se = est["monte_carlo"]["stderr"].as_f64().unwrap();
    assert!((mc - exact).abs() < 4.0 * se, "mc {mc} +- {se} vs exact {exact}");
}

#[test]
fn joint_distribution_export_has_axis_headers() {
    let cfg = parse_config(&scenario("measure_harmonic_joint.json")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    run(&cfg, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("joint.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("y_w\\y_k,"), "{header}");
    let cols = header.split(',').count();
    assert!(text.lines().skip(1).all(|l| l.split(',').count() == cols));
}

#[test]
fn manifest_hash_is_stable_and_outputs_exist() {
    let cfg = parse_config(&scenario("propagate_free_gaussian.json")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let man = run(&cfg, dir.path()).unwrap();
    for f in &man.outputs {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let reparsed = parse_config(&cfg.normalized()).unwrap();
    assert_eq!(man.config_hash, reparsed.hash());
    assert_eq!(man.config_hash.len(), 64);
    let norm = std::fs::read_to_string(dir.path().join("norm.csv")).unwrap();
    for line in norm.lines().skip(1) {
        let n: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((n - 1.0).abs() < 1e-9);
    }
}

#[test]
fn validation_report_schema_is_stable() {
    let text = scenario("validate.json").replace(r#""only": []"#, r#""only": [6, 7]"#);
    let cfg = parse_config(&text).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(&cfg, a.path()).unwrap();
    run(&cfg, b.path()).unwrap();
    let ra: ValidationReport = serde_json::from_value(read_json(&a.path().join("validation.json"))).unwrap();
    let rb: ValidationReport = serde_json::from_value(read_json(&b.path().join("validation.json"))).unwrap();
    assert!(ra.all_passed);
    assert_eq!(ra.criteria.len(), 2);
    for (x, y) in ra.criteria.iter().zip(&rb.criteria) {
        assert_eq!((x.id, &x.checks, &x.details), (y.id, &y.checks, &y.details));
    }
}
