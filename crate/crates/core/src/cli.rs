//! Command-line front end. Every subcommand reads a scenario, applies flag
//! overrides, runs its stage(s) into `--out`, and finishes with a manifest
//! of artifact hashes plus the effective configuration.
//!
//! Exit status: 0 on success, 1 when the problem is infeasible (or a stage
//! fails at run time), 2 on configuration errors.

use clap::{Parser, Subcommand};
use serde::Serialize;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gp_posterior::GpTrajectory;
use crate::hjb::{write_reachable_set, write_value_function, PathSample};
use crate::io::{write_csv, write_json, write_manifest, DirLock};
use crate::sim::{
    generate_truth, observation_times, sample_observations, station_value_function, target_value_function,
    Pipeline, RunOutput, Scenario,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INFEASIBLE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Clone, Parser)]
#[command(name = "rendezvous", version, about = "Rendezvous planning for slow pursuers", long_about = None)]
pub struct Command {
    #[command(subcommand)]
    pub stage: Stage,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Stage {
    /// Solve and dump the true target's and every station's value function.
    Hjb(#[command(flatten)] RunArgs),
    /// Observations, per-hypothesis fits, posterior weights and belief slices.
    Estimate(#[command(flatten)] RunArgs),
    /// Estimation plus reachable sets, the greedy plan and pursuer paths.
    Plan(#[command(flatten)] RunArgs),
    /// Kalman filter plus proportional guidance rollout against the truth.
    Baseline(#[command(flatten)] RunArgs),
    /// Full pipeline with scored outcomes.
    Simulate(#[command(flatten)] RunArgs),
    /// Full pipeline plus a planner-versus-baseline summary.
    Compare(#[command(flatten)] RunArgs),
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    /// Scenario file (JSON, schema version 1).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Observation noise seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Value-function grid `N1xN2xNTH`; also sets the planning grid to `N1xN2`.
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<[usize; 3]>,
    #[arg(long)]
    pub time_slices: Option<usize>,
    #[arg(long)]
    pub attempts: Option<usize>,
    #[arg(long)]
    pub sigma_r: Option<f64>,
    #[arg(long)]
    pub nugget: Option<f64>,
}

fn parse_grid(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split('x').collect();
    let bad = || format!("expected N1xN2xNTH (e.g. 101x101x64), got `{s}`");
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| bad())?;
    }
    Ok(out)
}

impl Stage {
    pub fn args(&self) -> &RunArgs {
        match self {
            Stage::Hjb(a) | Stage::Estimate(a) | Stage::Plan(a) | Stage::Baseline(a) | Stage::Simulate(a) | Stage::Compare(a) => a,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Hjb(_) => "hjb",
            Stage::Estimate(_) => "estimate",
            Stage::Plan(_) => "plan",
            Stage::Baseline(_) => "baseline",
            Stage::Simulate(_) => "simulate",
            Stage::Compare(_) => "compare",
        }
    }
}

impl RunArgs {
    /// Scenario with the flag overrides applied and re-validated.
    pub fn effective_scenario(&self) -> Result<Scenario> {
        let mut s = Scenario::from_path(&self.scenario)?;
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some([n1, n2, nt]) = self.grid {
            s.grids.hjb = [n1, n2, nt];
            s.grids.plan = [n1, n2];
        }
        if let Some(k) = self.time_slices {
            s.grids.time_slices = k;
        }
        if let Some(n) = self.attempts {
            s.planner.attempts = n;
        }
        if let Some(v) = self.sigma_r {
            s.planner.sigma_r = Some(v);
        }
        if let Some(v) = self.nugget {
            s.estimation.nugget = v;
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Serialize)]
struct EffectiveConfig<'a> {
    subcommand: &'static str,
    scenario_file: String,
    scenario: &'a Scenario,
}

/// Runs a parsed command and returns the artifacts it wrote (manifest last).
pub fn execute(cmd: &Command) -> Result<Vec<PathBuf>> {
    let args = cmd.stage.args();
    let scenario = args.effective_scenario()?;
    let out: &Path = &args.out;
    let _lock = DirLock::acquire(out)?;
    let mut artifacts = Vec::new();
    let mut timings = Vec::new();
    match cmd.stage {
        Stage::Hjb(_) => hjb_stage(&scenario, out, &mut artifacts)?,
        Stage::Baseline(_) => baseline_stage(&scenario, out, &mut artifacts)?,
        Stage::Estimate(_) | Stage::Plan(_) | Stage::Simulate(_) | Stage::Compare(_) => {
            let pipeline = Pipeline::prepare(&scenario)?;
            timings.extend(pipeline.timings.iter().cloned());
            let run = pipeline.run(scenario.seed)?;
            timings.extend(run.timings.iter().cloned());
            write_estimate(&pipeline, &run, out, &mut artifacts)?;
            if !matches!(cmd.stage, Stage::Estimate(_)) {
                write_plan(&run, out, &mut artifacts)?;
            }
            if matches!(cmd.stage, Stage::Simulate(_) | Stage::Compare(_)) {
                artifacts.push(run.baseline.write_csv(&out.join("baseline.csv"))?);
                artifacts.push(write_json(&out.join("report.json"), &run.report)?);
            }
            if matches!(cmd.stage, Stage::Compare(_)) {
                artifacts.push(write_json(&out.join("compare.json"), &Comparison::from(&run))?);
            }
        }
    }
    for t in &timings {
        eprintln!("{:>28}: {:.2}s", t.stage, t.seconds);
    }
    let config = EffectiveConfig {
        subcommand: cmd.stage.name(),
        scenario_file: args.scenario.display().to_string(),
        scenario: &scenario,
    };
    artifacts.push(write_manifest(out, &artifacts, &config)?);
    Ok(artifacts)
}

fn hjb_stage(s: &Scenario, out: &Path, artifacts: &mut Vec<PathBuf>) -> Result<()> {
    let vf = target_value_function(s, s.target.destination, s.target.turning_radius).map_err(|e| e.in_stage("hjb"))?;
    artifacts.extend(write_value_function(&vf, out, "target_value")?);
    for j in 0..s.pursuers.stations.len() {
        let st = station_value_function(s, j).map_err(|e| e.in_stage("hjb"))?;
        artifacts.extend(write_value_function(&st, out, &format!("station_{j}_value"))?);
    }
    Ok(())
}

fn write_path(path: &Path, samples: &[PathSample]) -> Result<PathBuf> {
    write_csv(
        path,
        &["t", "x1", "x2", "theta"],
        samples.iter().map(|p| [p.t, p.state.x1, p.state.x2, p.state.theta]),
    )
}

#[derive(Serialize)]
struct BaselineSummary {
    min_distance: f64,
    min_distance_time: f64,
    contact_radius: f64,
    hit: bool,
}

fn baseline_stage(s: &Scenario, out: &Path, artifacts: &mut Vec<PathBuf>) -> Result<()> {
    let truth = generate_truth(s).map_err(|e| e.in_stage("truth"))?;
    let end = truth.last().map_or(0.0, |p| p.t);
    let o = &s.observations;
    let obs = sample_observations(&truth, &observation_times(o.count, o.fraction, end), o.sigma, s.seed)?;
    let [x1, x2, th] = s.baseline.start;
    let pursuer = crate::baseline::PursuerState::new(
        crate::hjb::State::new(x1, x2, th),
        s.pursuers.speed,
        s.pursuers.turning_radius,
    )?;
    let cfg = crate::baseline::BaselineConfig {
        dt: s.baseline.dt,
        q: s.baseline.q,
        horizon: s.grids.horizon,
    };
    let r = crate::baseline::run_baseline(&truth, &obs, pursuer, &cfg).map_err(|e| e.in_stage("baseline"))?;
    artifacts.push(write_path(&out.join("truth.csv"), &truth)?);
    artifacts.push(write_json(&out.join("observations.json"), &obs)?);
    artifacts.push(r.write_csv(&out.join("baseline.csv"))?);
    artifacts.push(write_json(
        &out.join("baseline.json"),
        &BaselineSummary {
            min_distance: r.min_distance,
            min_distance_time: r.min_distance_time,
            contact_radius: s.planner.contact_radius,
            hit: r.min_distance <= s.planner.contact_radius,
        },
    )?);
    Ok(())
}

#[derive(Serialize)]
struct Posterior<'a> {
    destination_posterior: &'a [f64],
    rho_posterior: &'a [(f64, f64)],
    rho_mean: f64,
    hypotheses: &'a [crate::sim::HypothesisSummary],
    failed_fits: &'a [crate::sim::FailedFit],
}

fn write_tracks(path: &Path, gps: &[GpTrajectory], times: &[f64]) -> Result<PathBuf> {
    let rows = gps.iter().enumerate().flat_map(|(h, gp)| {
        times.iter().map(move |&t| {
            let (m, v) = (gp.mean(t), gp.variance(t));
            [h as f64, t, m[0], m[1], v[0], v[1]]
        })
    });
    write_csv(path, &["hypothesis", "t", "mean_x1", "mean_x2", "var_x1", "var_x2"], rows)
}

fn write_estimate(p: &Pipeline, run: &RunOutput, out: &Path, artifacts: &mut Vec<PathBuf>) -> Result<()> {
    let r = &run.report;
    artifacts.push(write_path(&out.join("truth.csv"), &p.truth)?);
    artifacts.push(write_json(&out.join("observations.json"), &r.observations)?);
    artifacts.push(write_json(
        &out.join("posterior.json"),
        &Posterior {
            destination_posterior: &r.destination_posterior,
            rho_posterior: &r.rho_posterior,
            rho_mean: r.rho_mean,
            hypotheses: &r.hypotheses,
            failed_fits: &r.failed_fits,
        },
    )?);
    artifacts.push(run.belief.write_weight_table(&out.join("weights.csv"))?);
    artifacts.push(write_tracks(&out.join("tracks.csv"), &run.estimate.gps, &p.plan_grid.times)?);
    let k = p.plan_grid.n_slices();
    let mut slices = vec![0, k / 2, k - 1];
    slices.dedup();
    for s in slices {
        artifacts.push(run.belief.write_density_csv(s, &out.join(format!("density_{s:03}.csv")))?);
    }
    Ok(())
}

fn write_plan(run: &RunOutput, out: &Path, artifacts: &mut Vec<PathBuf>) -> Result<()> {
    for rs in &run.reach {
        artifacts.extend(write_reachable_set(rs, out, &format!("reach_station_{}", rs.station))?);
    }
    let Some(plan) = &run.report.plan else {
        return Ok(());
    };
    artifacts.push(plan.write_json(&out.join("plan.json"))?);
    for (i, path) in run.pursuer_paths.iter().enumerate() {
        if let Some(pp) = path {
            artifacts.push(write_path(&out.join(format!("pursuer_{i}.csv")), &pp.path)?);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Comparison {
    contact_radius: f64,
    planner_hits: Vec<bool>,
    planner_distances: Vec<f64>,
    planner_any_hit: bool,
    baseline_min_distance: f64,
    baseline_hit: bool,
}

impl From<&RunOutput> for Comparison {
    fn from(run: &RunOutput) -> Self {
        let r = &run.report;
        let radius = r.plan.as_ref().and_then(|p| p.points.first()).map_or(f64::NAN, |p| p.contact_radius);
        Self {
            contact_radius: radius,
            planner_hits: r.outcomes.iter().map(|o| o.hit).collect(),
            planner_distances: r.outcomes.iter().map(|o| o.distance).collect(),
            planner_any_hit: r.any_hit,
            baseline_min_distance: r.baseline_min_distance,
            baseline_hit: r.baseline_min_distance <= radius,
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_config() || matches!(err, Error::Io(_)) {
        EXIT_CONFIG
    } else {
        EXIT_INFEASIBLE
    }
}

/// Parses `argv` (including the program name), runs the command and maps the
/// outcome to an exit status. Messages go to stderr.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cmd = match Command::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cmd) {
        Ok(artifacts) => {
            if let Some(m) = artifacts.last() {
                println!("{}", m.display());
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Reads the artifact list of a manifest as `(path, sha256)` pairs.
pub fn read_manifest(dir: &Path) -> Result<Vec<(String, String)>> {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let list = v["artifacts"]
        .as_array()
        .ok_or_else(|| Error::Config("manifest has no artifact list".into()))?;
    Ok(list
        .iter()
        .map(|e| {
            (
                e["path"].as_str().unwrap_or_default().to_string(),
                e["sha256"].as_str().unwrap_or_default().to_string(),
            )
        })
        .collect())
}
