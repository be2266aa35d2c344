//! End-to-end scenario engine.
//!
//! A [`Scenario`] is a JSON document (schema version 1) describing the target,
//! its candidate destinations, the observation schedule, priors, grids and the
//! pursuer fleet. [`Pipeline::prepare`] performs every value-function solve that
//! does not depend on the observations; [`Pipeline::run`] then draws one noisy
//! observation set and runs estimation, planning, scoring and the baseline.
//! Preparing once and running many seeds is how ensembles are evaluated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use crate::baseline::{run_baseline, BaselineConfig, BaselineResult, PursuerState};
use crate::error::{Error, Result};
use crate::gp_posterior::{gp_condition, param_posterior, Belief, GpTrajectory, RhoPrior};
use crate::hjb::{
    extract_trajectory, pursuer_path, reachable_set, solve_hjb, state_at, AngleFilter, DiskRegion, Grid3, HjbConfig,
    MeanTrack, Motion, PathSample, PlanGrid, PursuerPath, ReachableSet, State, TargetSet, ValueFunction,
};
use crate::kernels::KernelSpec;
use crate::map_estimator::{fit_map, uniform_collocation, DubinsClosedLoop, FitConfig, MapTrajectory, Observation, ParamSample};
use crate::planner::{plan, PlanResult, PlannerConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Integration step of the ground-truth rollout.
pub const TRUTH_DT: f64 = 1e-3;

/// Integration step of extracted pursuer paths.
pub const PURSUER_DT: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub notes: String,
    pub domain: Domain,
    pub destinations: Vec<DiskRegion>,
    pub target: TargetConfig,
    pub observations: ObservationConfig,
    pub prior: PriorConfig,
    pub estimation: EstimationConfig,
    pub grids: GridConfig,
    pub pursuers: PursuerConfig,
    pub planner: PlannerSettings,
    pub baseline: BaselineSettings,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    /// `(x1, x2, θ)` at `t = 0`.
    pub start: [f64; 3],
    pub speed: f64,
    /// True turning radius.
    pub turning_radius: f64,
    /// Index of the true destination.
    pub destination: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationConfig {
    /// Number of evenly spaced readings over `[0, fraction · arrival time]`.
    pub count: usize,
    pub fraction: f64,
    /// Noise standard deviation on every channel.
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub rho_mean: f64,
    pub rho_std: f64,
    pub rho_floor: f64,
    pub n_rho: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationConfig {
    pub map_lengthscale: f64,
    pub map_output_scale: f64,
    /// Lengthscale of the correction kernel; its output scale is `σ_s²`.
    pub gp_lengthscale: f64,
    pub collocation: usize,
    pub nugget: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// `(n1, n2, nθ)` for every value-function solve.
    pub hjb: [usize; 3],
    /// `(n1, n2)` of the planning grid.
    pub plan: [usize; 2],
    pub time_slices: usize,
    /// Estimation and planning horizon.
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationConfig {
    pub center: [f64; 2],
    pub radius: f64,
    /// Admissible launch headings; any heading when absent.
    #[serde(default)]
    pub headings: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PursuerConfig {
    pub speed: f64,
    pub turning_radius: f64,
    pub filter: AngleFilter,
    pub stations: Vec<StationConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerSettings {
    pub attempts: usize,
    pub contact_radius: f64,
    #[serde(default)]
    pub sigma_r: Option<f64>,
    #[serde(default)]
    pub temporal_window: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSettings {
    /// Initial pursuer pose; speed and turning radius come from the fleet.
    pub start: [f64; 3],
    pub dt: f64,
    pub q: f64,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| config_err(format!("scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read scenario {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_err(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let d = &self.domain;
        if !(d.hi[0] > d.lo[0] && d.hi[1] > d.lo[1]) {
            return Err(config_err("domain bounds are empty"));
        }
        let inside = |c: [f64; 2], r: f64| {
            c[0] - r >= d.lo[0] && c[0] + r <= d.hi[0] && c[1] - r >= d.lo[1] && c[1] + r <= d.hi[1]
        };
        if self.destinations.is_empty() {
            return Err(config_err("at least one destination is required"));
        }
        for (i, g) in self.destinations.iter().enumerate() {
            if !(g.radius > 0.0) || !inside(g.center, g.radius) {
                return Err(config_err(format!("destination {i} must have positive radius and lie inside the domain")));
            }
        }
        let t = &self.target;
        if t.destination >= self.destinations.len() {
            return Err(config_err(format!("target.destination {} out of range", t.destination)));
        }
        if !(t.speed > 0.0 && t.turning_radius > 0.0) || !inside([t.start[0], t.start[1]], 0.0) {
            return Err(config_err("target needs positive speed and radius and a start inside the domain"));
        }
        let o = &self.observations;
        if !(o.sigma >= 0.0 && o.fraction > 0.0 && o.fraction <= 1.0) {
            return Err(config_err("observations need sigma >= 0 and fraction in (0, 1]"));
        }
        let p = &self.prior;
        if !(p.rho_std > 0.0 && p.rho_floor > 0.0 && p.n_rho > 0) {
            return Err(config_err("prior needs rho_std > 0, rho_floor > 0 and n_rho >= 1"));
        }
        let e = &self.estimation;
        if !(e.map_lengthscale > 0.0 && e.map_output_scale > 0.0 && e.gp_lengthscale > 0.0 && e.nugget >= 0.0) {
            return Err(config_err("estimation kernels need positive scales and a non-negative nugget"));
        }
        if e.collocation < 2 {
            return Err(config_err("estimation.collocation must be >= 2"));
        }
        let g = &self.grids;
        if g.hjb.iter().any(|&n| n < 3) || g.plan.iter().any(|&n| n < 2) || g.time_slices == 0 || !(g.horizon > 0.0) {
            return Err(config_err("grids: hjb >= 3 nodes per axis, plan >= 2, at least one slice, positive horizon"));
        }
        let f = &self.pursuers;
        if !(f.speed > 0.0 && f.turning_radius > 0.0) {
            return Err(config_err("pursuers need positive speed and turning radius"));
        }
        if f.stations.is_empty() {
            return Err(config_err("at least one pursuer station is required"));
        }
        for (i, s) in f.stations.iter().enumerate() {
            if !(s.radius > 0.0) || !inside(s.center, s.radius) {
                return Err(config_err(format!("station {i} must have positive radius and lie inside the domain")));
            }
            if s.headings.as_ref().is_some_and(|h| h.is_empty()) {
                return Err(config_err(format!("station {i} lists no launch headings")));
            }
        }
        let pl = &self.planner;
        if !(pl.contact_radius > 0.0) || pl.sigma_r.is_some_and(|s| !(s > 0.0)) {
            return Err(config_err("planner needs a positive contact radius and sigma_r"));
        }
        let b = &self.baseline;
        if !(b.dt > 0.0 && b.q >= 0.0) {
            return Err(config_err("baseline needs dt > 0 and q >= 0"));
        }
        Ok(())
    }

    pub fn hjb_grid(&self) -> Grid3 {
        let [n1, n2, nt] = self.grids.hjb;
        Grid3 {
            n1,
            n2,
            n_theta: nt,
            lo: self.domain.lo,
            hi: self.domain.hi,
        }
    }

    pub fn plan_grid(&self) -> Result<PlanGrid> {
        let [n1, n2] = self.grids.plan;
        PlanGrid::uniform(n1, n2, self.domain.lo, self.domain.hi, self.grids.horizon, self.grids.time_slices)
    }

    pub fn rho_prior(&self) -> RhoPrior {
        RhoPrior {
            mean: self.prior.rho_mean,
            std: self.prior.rho_std,
            floor: self.prior.rho_floor,
        }
    }

    pub fn planner_config(&self) -> PlannerConfig {
        PlannerConfig {
            contact_radius: self.planner.contact_radius,
            sigma_r: self.planner.sigma_r,
            temporal_window: self.planner.temporal_window,
        }
    }

    pub fn station_target(&self, j: usize) -> Result<TargetSet> {
        let s = &self.pursuers.stations[j];
        let disk = DiskRegion::new(s.center, s.radius)?;
        Ok(match &s.headings {
            None => TargetSet::disk(disk),
            Some(h) => TargetSet::with_headings(disk, h.clone()),
        })
    }
}

/// Forward value function of a target heading for `destination` with `rho`.
pub fn target_value_function(scenario: &Scenario, destination: usize, rho: f64) -> Result<ValueFunction> {
    let disk = scenario
        .destinations
        .get(destination)
        .copied()
        .ok_or_else(|| Error::invalid(format!("no destination {destination}")))?;
    solve_hjb(
        &TargetSet::disk(disk),
        rho,
        scenario.target.speed,
        scenario.hjb_grid(),
        Motion::Forward,
        &HjbConfig::default(),
    )
}

/// Time-from-launch value function of station `j`.
pub fn station_value_function(scenario: &Scenario, j: usize) -> Result<ValueFunction> {
    solve_hjb(
        &scenario.station_target(j)?,
        scenario.pursuers.turning_radius,
        scenario.pursuers.speed,
        scenario.hjb_grid(),
        Motion::Backward,
        &HjbConfig::default(),
    )
}

/// Optimal path of the true target from its start into its destination.
pub fn generate_truth(scenario: &Scenario) -> Result<Vec<PathSample>> {
    let vf = target_value_function(scenario, scenario.target.destination, scenario.target.turning_radius)?;
    truth_from(&vf, scenario)
}

fn truth_from(vf: &ValueFunction, scenario: &Scenario) -> Result<Vec<PathSample>> {
    let [x1, x2, th] = scenario.target.start;
    extract_trajectory(vf, &State::new(x1, x2, th), TRUTH_DT)
}

/// `count` times evenly spaced over `[0, fraction · end]`, both ends included.
pub fn observation_times(count: usize, fraction: f64, end: f64) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![0.0],
        n => (0..n).map(|j| fraction * end * j as f64 / (n - 1) as f64).collect(),
    }
}

/// Truth sampled at `times` with independent Gaussian noise of std `sigma` on
/// `(x1, x2, θ)`. With `sigma = 0` the readings are exact.
pub fn sample_observations(truth: &[PathSample], times: &[f64], sigma: f64, seed: u64) -> Result<Vec<Observation>> {
    let (Some(first), Some(last)) = (truth.first(), truth.last()) else {
        return Err(Error::invalid("empty truth trajectory"));
    };
    if let Some(t) = times.iter().find(|&&t| t < first.t - 1e-12 || t > last.t + 1e-12) {
        return Err(Error::invalid(format!("observation time {t} outside the truth span")));
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::invalid(format!("observation noise: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(times
        .iter()
        .map(|&t| {
            let s = state_at(truth, t).expect("non-empty truth");
            let y = vec![
                s.x1 + noise.sample(&mut rng),
                s.x2 + noise.sample(&mut rng),
                s.theta + noise.sample(&mut rng),
            ];
            Observation {
                t,
                y,
                sigma: vec![sigma; 3],
            }
        })
        .collect())
}

/// Wall-clock time spent in one stage.
#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: &'static str,
    pub seconds: f64,
}

fn timed<T>(timings: &mut Vec<StageTiming>, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f().map_err(|e| e.in_stage(stage));
    let seconds = start.elapsed().as_secs_f64();
    log::info!("{stage}: {seconds:.2}s");
    timings.push(StageTiming { stage, seconds });
    out
}

/// Observation-independent state of a scenario: truth and every value function.
pub struct Pipeline {
    pub scenario: Scenario,
    pub truth: Vec<PathSample>,
    pub samples: Vec<ParamSample>,
    pub plan_grid: PlanGrid,
    pub stations: Vec<ValueFunction>,
    dynamics: Vec<DubinsClosedLoop>,
    pub timings: Vec<StageTiming>,
}

/// Result of the estimation stage for one observation set.
pub struct Estimate {
    pub observations: Vec<Observation>,
    /// Hypotheses whose fit converged, with their fits and corrections.
    pub samples: Vec<ParamSample>,
    pub fits: Vec<MapTrajectory>,
    pub gps: Vec<GpTrajectory>,
    pub log_likelihoods: Vec<f64>,
    pub weights: Vec<f64>,
    pub failed: Vec<FailedFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedFit {
    pub rho: f64,
    pub dest_index: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSummary {
    pub rho: f64,
    pub dest_index: usize,
    pub prior_mass: f64,
    pub log_likelihood: f64,
    pub weight: f64,
    pub map_objective: f64,
    pub map_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointOutcome {
    pub t: f64,
    pub x: [f64; 2],
    pub predicted_success: f64,
    pub truth: [f64; 2],
    pub distance: f64,
    pub hit: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub truth_arrival_time: f64,
    pub observations: Vec<Observation>,
    pub hypotheses: Vec<HypothesisSummary>,
    pub failed_fits: Vec<FailedFit>,
    /// Posterior mass per destination index.
    pub destination_posterior: Vec<f64>,
    /// `(ρ, mass)` in increasing `ρ`.
    pub rho_posterior: Vec<(f64, f64)>,
    pub rho_mean: f64,
    pub plan: Option<PlanResult>,
    pub outcomes: Vec<PointOutcome>,
    pub any_hit: bool,
    pub baseline_min_distance: f64,
    pub baseline_min_distance_time: f64,
}

impl RunReport {
    pub fn most_probable_destination(&self) -> usize {
        self.destination_posterior
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |a, (i, &m)| if m > a.1 { (i, m) } else { a })
            .0
    }
}

/// Everything one seed produced; only `report` is serialized as a whole.
pub struct RunOutput {
    pub report: RunReport,
    pub estimate: Estimate,
    pub belief: Belief,
    /// Belief after every planned attempt has failed; kept out of the report.
    pub final_belief: Option<Belief>,
    pub reach: Vec<ReachableSet>,
    pub pursuer_paths: Vec<Option<PursuerPath>>,
    pub baseline: BaselineResult,
    pub timings: Vec<StageTiming>,
}

impl Pipeline {
    /// Truth, one forward solve per hypothesis and one backward solve per
    /// station.
    pub fn prepare(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let mut timings = Vec::new();
        let truth = timed(&mut timings, "truth", || generate_truth(scenario))?;
        let samples = timed(&mut timings, "parameter set", || {
            crate::gp_posterior::stratified_param_set(
                &scenario.rho_prior(),
                scenario.prior.n_rho,
                scenario.destinations.len(),
            )
        })?;
        let dynamics = timed(&mut timings, "hypothesis value functions", || {
            samples
                .par_iter()
                .map(|s| DubinsClosedLoop::new(&target_value_function(scenario, s.dest_index, s.rho)?))
                .collect::<Result<Vec<_>>>()
        })?;
        let stations = timed(&mut timings, "station value functions", || {
            (0..scenario.pursuers.stations.len())
                .into_par_iter()
                .map(|j| station_value_function(scenario, j))
                .collect::<Result<Vec<_>>>()
        })?;
        Ok(Self {
            scenario: scenario.clone(),
            truth,
            samples,
            plan_grid: scenario.plan_grid()?,
            stations,
            dynamics,
            timings,
        })
    }

    pub fn truth_arrival_time(&self) -> f64 {
        self.truth.last().map_or(0.0, |p| p.t)
    }

    pub fn observations(&self, seed: u64) -> Result<Vec<Observation>> {
        let o = &self.scenario.observations;
        let times = observation_times(o.count, o.fraction, self.truth_arrival_time());
        sample_observations(&self.truth, &times, o.sigma, seed)
    }

    /// Per-hypothesis MAP fits, corrections, likelihoods and weights.
    /// Hypotheses whose fit fails are dropped and listed in `failed`.
    pub fn estimate(&self, observations: Vec<Observation>) -> Result<Estimate> {
        let sc = &self.scenario;
        let e = &sc.estimation;
        let sigma = sc.observations.sigma;
        if observations.is_empty() {
            return Err(Error::invalid("estimation needs at least one observation"));
        }
        if !(sigma > 0.0) {
            return Err(Error::invalid("estimation needs positive observation noise"));
        }
        let map_spec = KernelSpec::new(e.map_lengthscale, e.map_output_scale)?;
        let gp_spec = KernelSpec::new(e.gp_lengthscale, sigma * sigma)?;
        let colloc = uniform_collocation(sc.grids.horizon, e.collocation);
        let cfg = FitConfig {
            nugget: e.nugget,
            ..FitConfig::default()
        };
        let results: Vec<Result<(MapTrajectory, GpTrajectory, f64)>> = self
            .samples
            .par_iter()
            .zip(&self.dynamics)
            .map(|(s, dy)| {
                let fit = fit_map(&observations, Some(*s), &[map_spec; 3], &colloc, &[sigma; 3], dy, &cfg)?;
                let gp = gp_condition(fit.clone(), &observations, &[gp_spec; 2], &[sigma; 2])?;
                let ll = gp.log_marginal_likelihood()?;
                Ok((fit, gp, ll))
            })
            .collect();
        let mut out = Estimate {
            observations,
            samples: vec![],
            fits: vec![],
            gps: vec![],
            log_likelihoods: vec![],
            weights: vec![],
            failed: vec![],
        };
        for (s, r) in self.samples.iter().zip(results) {
            match r {
                Ok((fit, gp, ll)) => {
                    out.samples.push(*s);
                    out.fits.push(fit);
                    out.gps.push(gp);
                    out.log_likelihoods.push(ll);
                }
                Err(err) => {
                    log::warn!("fit for rho = {:.4}, destination {} failed: {err}", s.rho, s.dest_index);
                    out.failed.push(FailedFit {
                        rho: s.rho,
                        dest_index: s.dest_index,
                        error: err.to_string(),
                    });
                }
            }
        }
        if out.samples.is_empty() {
            return Err(Error::WeightUnderflow);
        }
        out.weights = param_posterior(&out.samples, &out.log_likelihoods)?;
        Ok(out)
    }

    /// Mean position and heading per slice for every hypothesis carrying at
    /// least 1% of the largest weight.
    pub fn mean_tracks(&self, est: &Estimate) -> Vec<MeanTrack> {
        let wmax = est.weights.iter().copied().fold(0.0, f64::max);
        est.gps
            .iter()
            .zip(&est.fits)
            .zip(&est.weights)
            .filter(|(_, &w)| w >= 0.01 * wmax)
            .map(|((gp, fit), _)| {
                let (points, headings) = self
                    .plan_grid
                    .times
                    .iter()
                    .map(|&t| {
                        let m = gp.mean(t);
                        ([m[0], m[1]], fit.eval(t)[2])
                    })
                    .unzip();
                MeanTrack { points, headings }
            })
            .collect()
    }

    pub fn reachable_sets(&self, est: &Estimate) -> Result<Vec<ReachableSet>> {
        let filter = self.scenario.pursuers.filter;
        let tracks = match filter {
            AngleFilter::Free => vec![],
            AngleFilter::Perpendicular => self.mean_tracks(est),
        };
        self.stations
            .par_iter()
            .enumerate()
            .map(|(j, vf)| reachable_set(vf, j, &self.plan_grid, filter, &tracks))
            .collect()
    }

    /// Full pipeline for one observation seed.
    pub fn run(&self, seed: u64) -> Result<RunOutput> {
        let sc = &self.scenario;
        let mut timings = Vec::new();
        let observations = timed(&mut timings, "observations", || self.observations(seed))?;
        let estimate = timed(&mut timings, "estimation", || self.estimate(observations.clone()))?;
        let belief = timed(&mut timings, "belief", || {
            Belief::from_gp(self.plan_grid.clone(), &estimate.gps, &estimate.weights)
        })?;
        let reach = timed(&mut timings, "reachability", || self.reachable_sets(&estimate))?;
        let mut plan_result = timed(&mut timings, "planning", || {
            if sc.planner.attempts == 0 {
                return Ok(None);
            }
            plan(belief.clone(), sc.planner.attempts, &reach, &sc.planner_config()).map(Some)
        })?;
        let pursuer_paths = timed(&mut timings, "pursuer paths", || {
            Ok(plan_result
                .iter()
                .flat_map(|p| &p.points)
                .map(|pt| {
                    let (station, heading) = (pt.station?, pt.heading?);
                    pursuer_path(&self.stations[station], pt.t, pt.x, heading, PURSUER_DT)
                        .map_err(|e| log::warn!("pursuer path to t = {:.4} failed: {e}", pt.t))
                        .ok()
                })
                .collect::<Vec<_>>())
        })?;
        let outcomes: Vec<PointOutcome> = plan_result
            .iter()
            .flat_map(|p| &p.points)
            .map(|pt| {
                let truth = state_at(&self.truth, pt.t).expect("non-empty truth").position();
                let distance = (truth[0] - pt.x[0]).hypot(truth[1] - pt.x[1]);
                PointOutcome {
                    t: pt.t,
                    x: pt.x,
                    predicted_success: pt.success_probability,
                    truth,
                    distance,
                    hit: distance <= pt.contact_radius,
                }
            })
            .collect();
        let baseline = timed(&mut timings, "baseline", || {
            let [x1, x2, th] = sc.baseline.start;
            let pursuer = PursuerState::new(State::new(x1, x2, th), sc.pursuers.speed, sc.pursuers.turning_radius)?;
            let cfg = BaselineConfig {
                dt: sc.baseline.dt,
                q: sc.baseline.q,
                horizon: sc.grids.horizon,
            };
            run_baseline(&self.truth, &observations, pursuer, &cfg)
        })?;
        let final_belief = plan_result.as_mut().and_then(|p| p.final_belief.take());
        let report = RunReport {
            scenario: sc.name.clone(),
            seed,
            truth_arrival_time: self.truth_arrival_time(),
            observations,
            hypotheses: summarize(&estimate),
            failed_fits: estimate.failed.clone(),
            destination_posterior: destination_posterior(&estimate.samples, &estimate.weights, sc.destinations.len()),
            rho_posterior: rho_posterior(&estimate.samples, &estimate.weights),
            rho_mean: crate::gp_posterior::posterior_mean_rho(&estimate.samples, &estimate.weights),
            any_hit: outcomes.iter().any(|o| o.hit),
            plan: plan_result,
            outcomes,
            baseline_min_distance: baseline.min_distance,
            baseline_min_distance_time: baseline.min_distance_time,
        };
        Ok(RunOutput {
            report,
            estimate,
            belief,
            final_belief,
            reach,
            pursuer_paths,
            baseline,
            timings,
        })
    }
}

fn summarize(est: &Estimate) -> Vec<HypothesisSummary> {
    est.samples
        .iter()
        .zip(&est.fits)
        .zip(est.log_likelihoods.iter().zip(&est.weights))
        .map(|((s, f), (&ll, &w))| HypothesisSummary {
            rho: s.rho,
            dest_index: s.dest_index,
            prior_mass: s.prior_mass,
            log_likelihood: ll,
            weight: w,
            map_objective: f.objective,
            map_iterations: f.iterations,
        })
        .collect()
}

/// Posterior mass per destination index (zero for destinations without a
/// surviving hypothesis).
pub fn destination_posterior(samples: &[ParamSample], weights: &[f64], n_dest: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_dest];
    for (s, w) in samples.iter().zip(weights) {
        out[s.dest_index] += w;
    }
    out
}

pub fn rho_posterior(samples: &[ParamSample], weights: &[f64]) -> Vec<(f64, f64)> {
    let mut acc: BTreeMap<u64, f64> = BTreeMap::new();
    for (s, w) in samples.iter().zip(weights) {
        *acc.entry(s.rho.to_bits()).or_default() += w;
    }
    let mut out: Vec<(f64, f64)> = acc.into_iter().map(|(b, m)| (f64::from_bits(b), m)).collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Prepares the scenario and runs it with its own seed.
pub fn run_scenario(scenario: &Scenario) -> Result<RunOutput> {
    Pipeline::prepare(scenario)?.run(scenario.seed)
}
