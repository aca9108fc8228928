use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    std::env::var_os("SHAPE_SYNTH_FIXTURES")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures"))
}

fn mini(name: &str) -> PathBuf {
    fixtures().join("mini-state").join(name)
}

fn shape_synth(args: &[&str], paths: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_shape-synth"));
    cmd.args(args);
    for (flag, path) in paths {
        cmd.arg(flag).arg(path);
    }
    cmd.output().unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

#[test]
fn stratified_sample_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = shape_synth(
            &["sample", "--target-n", "80", "--seed", "9"],
            &[("--survey", &mini("survey.csv")), ("--recode", &mini("recode.toml")), ("--out-dir", &out)],
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let sample = rows(&out.join("survey_sample.csv"));
        assert!(!sample.is_empty() && sample.len() <= 80);
        outputs.push(std::fs::read(out.join("survey_sample.csv")).unwrap());
        assert_eq!(manifest(&out)["status"], "ok");
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn region_sample_keeps_only_that_region() {
    let dir = tempfile::tempdir().unwrap();
    let o = shape_synth(
        &["sample", "--mode", "region", "--region", "MS"],
        &[("--survey", &mini("survey.csv")), ("--recode", &mini("recode.toml")), ("--out-dir", dir.path())],
    );
    assert!(o.status.success());
    let mut r = csv::Reader::from_path(dir.path().join("survey_sample.csv")).unwrap();
    let col = r.headers().unwrap().iter().position(|h| h == "state").unwrap();
    let states: Vec<String> = r.records().map(|x| x.unwrap()[col].to_string()).collect();
    assert_eq!(states.len(), 200);
    assert!(states.iter().all(|s| s == "MS"));
}

#[test]
fn unknown_stratum_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = shape_synth(
        &["sample", "--target-n", "10", "--strata", "age,shoe_size"],
        &[("--survey", &mini("survey.csv")), ("--recode", &mini("recode.toml")), ("--out-dir", dir.path())],
    );
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(manifest(dir.path())["status"], "failed");
}

fn run_fixture(dir: &Path) {
    let o = shape_synth(&["run"], &[("--config", &mini("shape.toml")), ("--out", dir)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn evaluate_prevalence_table_against_reference() {
    let dir = tempfile::tempdir().unwrap();
    run_fixture(&dir.path().join("run"));
    let out = dir.path().join("eval");
    let o = shape_synth(
        &["evaluate", "--model", "synthetic", "--region", "MS"],
        &[
            ("--estimates", &dir.path().join("run/level2_prevalence.csv")),
            ("--reference", &mini("reference_county.csv")),
            ("--out-dir", &out),
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = rows(&out.join("metrics.csv"));
    assert_eq!(metrics.len(), 11);
    for m in &metrics {
        let coverage: f64 = m[6].parse().unwrap();
        assert!((0.0..=1.0).contains(&coverage));
    }

    let ranked = dir.path().join("rank");
    let o = shape_synth(&["rank"], &[("--input", &out.join("metrics.csv")), ("--out-dir", &ranked)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(rows(&ranked.join("ranking.csv")).len(), 11);
}

#[test]
fn prevalence_table_needs_model_and_region() {
    let dir = tempfile::tempdir().unwrap();
    run_fixture(&dir.path().join("run"));
    let o = shape_synth(
        &["evaluate"],
        &[
            ("--estimates", &dir.path().join("run/level1_prevalence.csv")),
            ("--reference", &mini("reference_county.csv")),
            ("--out-dir", &dir.path().join("eval")),
        ],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reference_without_ci_leaves_coverage_empty() {
    let dir = tempfile::tempdir().unwrap();
    let reference = dir.path().join("reference.csv");
    std::fs::write(
        &reference,
        "region,zone_id,outcome,estimate\nX,a,asthma,10\nX,b,asthma,12\nX,c,asthma,15\n",
    )
    .unwrap();
    let estimates = dir.path().join("estimates.csv");
    std::fs::write(
        &estimates,
        "model,region,zone_id,outcome,estimate\nm,X,a,asthma,9\nm,X,b,asthma,13\nm,X,c,asthma,14\nm,X,d,asthma,20\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = shape_synth(
        &["evaluate"],
        &[("--estimates", &estimates), ("--reference", &reference), ("--out-dir", &out)],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("CI coverage left empty"));

    let mut r = csv::Reader::from_path(out.join("metrics.csv")).unwrap();
    let headers = r.headers().unwrap().clone();
    let row = r.records().next().unwrap().unwrap();
    let get = |name: &str| row[headers.iter().position(|h| h == name).unwrap()].to_string();
    assert_eq!(get("ci_coverage"), "");
    assert_eq!(get("mae"), "1");
    assert_eq!(get("n"), "3");
    assert_eq!(get("excluded"), "1");

    let m = manifest(&out);
    let warnings = m["warnings"].as_array().unwrap();
    assert!(warnings.iter().any(|w| w.as_str().unwrap().contains("excluded")));
}

#[test]
fn rank_rejects_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty.csv");
    std::fs::write(&input, "").unwrap();
    let o = shape_synth(&["rank"], &[("--input", &input), ("--out-dir", &dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn rank_threshold_from_model() {
    let dir = tempfile::tempdir().unwrap();
    let o = shape_synth(
        &["rank", "--threshold-model", "CDC PLACES"],
        &[("--input", &fixtures().join("published/deviations.csv")), ("--out-dir", dir.path())],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(manifest(dir.path())["options"]["threshold"].as_f64().map(|t| t > 0.0), Some(true));

    let o = shape_synth(
        &["rank", "--threshold-model", "nobody"],
        &[("--input", &fixtures().join("published/deviations.csv")), ("--out-dir", dir.path())],
    );
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn missing_config_exits_with_schema_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = shape_synth(&["run"], &[("--config", &dir.path().join("absent.toml"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("shape-synth:"));
}

#[test]
fn make_fixture_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut digests = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = shape_synth(&["make-fixture", "--counties", "3"], &[("--out-dir", &out)]);
        assert!(o.status.success());
        digests.push(manifest(&out)["outputs"].clone());
    }
    assert_eq!(digests[0], digests[1]);
    assert!(digests[0].as_object().unwrap().len() >= 8);
}
