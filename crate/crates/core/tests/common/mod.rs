#![allow(dead_code)]

pub mod dubins;

use rendezvous::sim::Scenario;
use std::path::{Path, PathBuf};

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn shipped_scenario_path() -> PathBuf {
    manifest_dir().join("scenarios/slow_pursuer.json")
}

pub fn shipped_scenario() -> Scenario {
    Scenario::from_path(&shipped_scenario_path()).expect("shipped scenario parses")
}

/// Small, fast variant of the shipped scenario for plumbing tests.
pub fn small_scenario() -> Scenario {
    let mut s = shipped_scenario();
    s.name = "small".into();
    s.prior.n_rho = 2;
    s.grids.hjb = [41, 41, 32];
    s.grids.plan = [41, 41];
    s.grids.time_slices = 16;
    s.estimation.collocation = 24;
    s.planner.attempts = 2;
    s.pursuers.filter = rendezvous::hjb::AngleFilter::Free;
    s.pursuers.stations[0].headings = None;
    s.baseline.dt = 2e-3;
    s
}

pub fn write_scenario(s: &Scenario, dir: &Path) -> PathBuf {
    let path = dir.join(format!("{}.json", s.name));
    std::fs::write(&path, serde_json::to_string_pretty(s).unwrap()).unwrap();
    path
}
