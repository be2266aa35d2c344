mod common;

use rendezvous::cli::{dispatch, read_manifest, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OK};
use rendezvous::io::sha256_file;
use std::fs;
use std::path::Path;

fn run(stage: &str, scenario: &Path, out: &Path, extra: &[&str]) -> i32 {
    let mut argv = vec![
        "rendezvous".to_string(),
        stage.to_string(),
        "--scenario".into(),
        scenario.display().to_string(),
        "--out".into(),
        out.display().to_string(),
    ];
    argv.extend(extra.iter().map(|s| s.to_string()));
    dispatch(argv)
}

fn manifest_matches_files(dir: &Path) {
    let entries = read_manifest(dir).unwrap();
    assert!(!entries.is_empty());
    for (rel, hash) in entries {
        assert_eq!(sha256_file(&dir.join(&rel)).unwrap(), hash, "{rel}");
    }
    assert!(!dir.join(".lock").exists(), "lock released");
}

#[test]
fn hjb_writes_value_dumps_with_sidecars() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = common::write_scenario(&common::small_scenario(), tmp.path());
    let out = tmp.path().join("run");
    assert_eq!(run("hjb", &scenario, &out, &[]), EXIT_OK);
    for stem in ["target_value", "station_0_value"] {
        let bin = fs::metadata(out.join(format!("{stem}.f64"))).unwrap();
        assert_eq!(bin.len(), 41 * 41 * 32 * 8);
        let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(format!("{stem}.json"))).unwrap()).unwrap();
        assert_eq!(meta["grid"]["n_theta"], 32);
    }
    manifest_matches_files(&out);
}

#[test]
fn simulate_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = common::write_scenario(&common::small_scenario(), tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run("simulate", &scenario, &a, &["--seed", "7"]), EXIT_OK);
    assert_eq!(run("simulate", &scenario, &b, &["--seed", "7"]), EXIT_OK);
    let (ma, mb) = (read_manifest(&a).unwrap(), read_manifest(&b).unwrap());
    assert_eq!(ma, mb);
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
    assert!(ma.iter().any(|(p, _)| p == "report.json"));
    manifest_matches_files(&a);
}

#[test]
fn compare_reports_hits_and_baseline_miss() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = common::write_scenario(&common::small_scenario(), tmp.path());
    let out = tmp.path().join("cmp");
    assert_eq!(run("compare", &scenario, &out, &["--attempts", "3"]), EXIT_OK);
    let cmp: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("compare.json")).unwrap()).unwrap();
    let hits = cmp["planner_hits"].as_array().unwrap();
    let dists = cmp["planner_distances"].as_array().unwrap();
    assert!(!hits.is_empty() && hits.len() == dists.len());
    for (h, d) in hits.iter().zip(dists) {
        assert_eq!(h.as_bool().unwrap(), d.as_f64().unwrap() <= cmp["contact_radius"].as_f64().unwrap());
    }
    assert!(cmp["baseline_min_distance"].as_f64().unwrap() >= 0.0);
    assert!(cmp["baseline_hit"].is_boolean());
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["effective_config"]["scenario"]["planner"]["attempts"], 3);
    assert_eq!(manifest["effective_config"]["subcommand"], "compare");
    manifest_matches_files(&out);
}

#[test]
fn estimate_and_baseline_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = common::write_scenario(&common::small_scenario(), tmp.path());
    let est = tmp.path().join("est");
    assert_eq!(run("estimate", &scenario, &est, &["--nugget", "1e-4"]), EXIT_OK);
    for f in ["posterior.json", "weights.csv", "tracks.csv", "density_000.csv", "observations.json"] {
        assert!(est.join(f).exists(), "{f}");
    }
    assert!(!est.join("plan.json").exists());
    let base = tmp.path().join("base");
    assert_eq!(run("baseline", &scenario, &base, &[]), EXIT_OK);
    let csv = fs::read_to_string(base.join("baseline.csv")).unwrap();
    assert!(csv.starts_with("t,pursuer_x1,pursuer_x2,pursuer_theta,est_x1,est_x2,true_x1,true_x2,distance"));
    manifest_matches_files(&base);
}

#[test]
fn plan_overrides_and_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = common::write_scenario(&common::small_scenario(), tmp.path());
    let out = tmp.path().join("plan");
    let code = run(
        "plan",
        &scenario,
        &out,
        &["--grid", "41x41x32", "--time-slices", "12", "--attempts", "2", "--sigma-r", "0.01"],
    );
    assert_eq!(code, EXIT_OK);
    let plan: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan["points"].as_array().unwrap().len(), 2);
    assert!(out.join("reach_station_0.rle").exists());
    assert!(out.join("pursuer_0.csv").exists());
}

#[test]
fn infeasible_plan_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let mut s = common::small_scenario();
    s.name = "unreachable".into();
    // A slow station in the far corner reaches no planning node within the horizon.
    s.pursuers.stations[0].center = [0.95, 0.05];
    s.pursuers.stations[0].radius = 0.01;
    s.pursuers.speed = 0.05;
    s.grids.plan = [11, 11];
    s.grids.horizon = 0.3;
    let scenario = common::write_scenario(&s, tmp.path());
    assert_eq!(run("plan", &scenario, &tmp.path().join("out"), &[]), EXIT_INFEASIBLE);
}

#[test]
fn config_problems_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let mut s = common::small_scenario();
    let good = common::write_scenario(&s, tmp.path());
    assert_eq!(run("simulate", &good, &tmp.path().join("x"), &["--grid", "41x41"]), EXIT_CONFIG);
    assert_eq!(run("simulate", &good, &tmp.path().join("x"), &["--unknown"]), EXIT_CONFIG);

    s.name = "bad".into();
    s.schema_version = 9;
    let bad = common::write_scenario(&s, tmp.path());
    assert_eq!(run("simulate", &bad, &tmp.path().join("y"), &[]), EXIT_CONFIG);

    let locked = tmp.path().join("locked");
    fs::create_dir_all(&locked).unwrap();
    fs::write(locked.join(".lock"), "").unwrap();
    assert_eq!(run("hjb", &good, &locked, &[]), EXIT_CONFIG);
    assert!(!locked.join("manifest.json").exists());
}
