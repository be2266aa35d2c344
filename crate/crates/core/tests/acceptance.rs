//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). By default it reports and exits
//! 0; set `ACCEPTANCE_STRICT=1` to exit 1 when any criterion fails.

mod common;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Binomial, DiscreteCDF};
use std::f64::consts::{PI, TAU};
use std::time::Instant;

use rendezvous::gp_posterior::{gp_condition, Belief, PriorMean};
use rendezvous::hjb::{
    reachable_set, solve_hjb, AngleFilter, DiskRegion, Grid3, HjbConfig, Motion, PlanGrid, State, TargetSet,
};
use rendezvous::kernels::KernelSpec;
use rendezvous::map_estimator::{fit_map, uniform_collocation, DubinsClosedLoop, FitConfig, Observation, ParamSample};
use rendezvous::planner::{failure_field, select_rendezvous, update_on_failure};
use rendezvous::sim::{
    generate_truth, observation_times, sample_observations, target_value_function, Pipeline, RunReport, Scenario,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// 1 -----------------------------------------------------------------------

fn hjb_accuracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let rho = 0.05;
    let targets = [
        DiskRegion::new([0.3, 0.6], 0.04).unwrap(),
        DiskRegion::new([0.65, 0.35], 0.03).unwrap(),
    ];
    let mut queries = Vec::new();
    for (ti, t) in targets.iter().enumerate() {
        while queries.iter().filter(|(i, _)| *i == ti).count() < 25 {
            let s = [rng.random_range(0.25..0.75), rng.random_range(0.25..0.75), rng.random_range(0.0..TAU)];
            if (s[0] - t.center[0]).hypot(s[1] - t.center[1]) >= t.radius + 2.0 * rho {
                queries.push((ti, s));
            }
        }
    }
    let oracle: Vec<f64> = queries
        .iter()
        .map(|(ti, s)| common::dubins::time_to_disk(*s, targets[*ti].center, targets[*ti].radius, rho, 1.0, 180))
        .collect();

    let mut max_err = [0.0f64; 2];
    let mut worst_time: f64 = 0.0;
    let mut within = true;
    for (level, (n, nt)) in [(101, 64), (201, 128)].into_iter().enumerate() {
        let grid = Grid3::unit(n, n, nt);
        let tol_cells = 3.0 * grid.cell_width();
        for (ti, t) in targets.iter().enumerate() {
            let start = Instant::now();
            let vf = solve_hjb(&TargetSet::disk(*t), rho, 1.0, grid, Motion::Forward, &HjbConfig::default()).unwrap();
            worst_time = worst_time.max(start.elapsed().as_secs_f64());
            for ((qi, s), want) in queries.iter().zip(&oracle) {
                if *qi != ti {
                    continue;
                }
                let got = vf.eval(&State::new(s[0], s[1], s[2])).unwrap();
                let err = (got - want).abs();
                max_err[level] = max_err[level].max(err);
                if level == 0 && err > tol_cells.max(0.02 * want) {
                    within = false;
                }
            }
        }
    }
    let ratio = max_err[0] / max_err[1];
    outcome(
        within && ratio >= 1.5 && worst_time <= 60.0,
        format!(
            "max err 101: {:.4}, 201: {:.4} (ratio {ratio:.2}), slowest solve {worst_time:.1}s",
            max_err[0], max_err[1]
        ),
    )
}

// 2 -----------------------------------------------------------------------

fn gpr_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=20);
        let mut times: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        times.sort_by(f64::total_cmp);
        let specs = [
            KernelSpec::new(rng.random_range(0.05..0.3), rng.random_range(0.1..2.0)).unwrap(),
            KernelSpec::new(rng.random_range(0.05..0.3), rng.random_range(0.1..2.0)).unwrap(),
        ];
        let sigma = [rng.random_range(0.01..0.3), rng.random_range(0.01..0.3)];
        let obs: Vec<Observation> = times
            .iter()
            .map(|&t| Observation::new(t, vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)], vec![1.0; 2]).unwrap())
            .collect();
        let gp = gp_condition(PriorMean::Zero, &obs, &specs, &sigma).unwrap();
        let mut lml = 0.0;
        for c in 0..2 {
            let k = DMatrix::from_fn(n, n, |a, b| specs[c].eval(times[a], times[b]) + if a == b { sigma[c].powi(2) } else { 0.0 });
            let y = DVector::from_iterator(n, obs.iter().map(|o| o.y[c]));
            let lu = k.lu();
            let alpha = lu.solve(&y).unwrap();
            lml += -0.5 * y.dot(&alpha) - 0.5 * lu.determinant().ln() - 0.5 * n as f64 * (2.0 * PI).ln();
            for _ in 0..5 {
                let t = rng.random_range(0.0..1.0);
                let kx = DVector::from_iterator(n, times.iter().map(|&s| specs[c].eval(t, s)));
                let mean = kx.dot(&alpha);
                let var = specs[c].eval(t, t) - kx.dot(&lu.solve(&kx).unwrap());
                let (gm, gv) = (gp.mean(t)[c], gp.variance(t)[c]);
                worst = worst.max((gm - mean).abs() / mean.abs().max(1e-3));
                worst = worst.max((gv - var.max(0.0)).abs() / var.abs().max(1e-3));
            }
        }
        let got = gp.log_marginal_likelihood().unwrap();
        worst = worst.max((got - lml).abs() / lml.abs().max(1.0));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-8 && secs < 1.0, format!("worst relative error {worst:.2e} in {secs:.3}s"))
}

// 3 -----------------------------------------------------------------------

fn map_recovery(s: &Scenario) -> Outcome {
    let vf = target_value_function(s, s.target.destination, s.target.turning_radius).unwrap();
    let truth = generate_truth(s).unwrap();
    let end = truth.last().unwrap().t;
    let dyn_true = DubinsClosedLoop::new(&vf).unwrap();
    let param = ParamSample::new(s.target.turning_radius, s.target.destination, 1.0, 1.0).unwrap();
    let spec = KernelSpec::new(s.estimation.map_lengthscale, s.estimation.map_output_scale).unwrap();
    let colloc = uniform_collocation(end, s.estimation.collocation);
    let cfg = FitConfig {
        nugget: s.estimation.nugget,
        ..FitConfig::default()
    };
    let rmse = |obs: &[Observation], sigma: f64| -> f64 {
        let fit = fit_map(obs, Some(param), &[spec; 3], &colloc, &[sigma; 3], &dyn_true, &cfg).unwrap();
        let n = 400;
        let se: f64 = (0..n)
            .map(|k| {
                let t = end * k as f64 / (n - 1) as f64;
                let z = fit.eval(t);
                let p = rendezvous::hjb::state_at(&truth, t).unwrap();
                (z[0] - p.x1).powi(2) + (z[1] - p.x2).powi(2)
            })
            .sum();
        (se / n as f64).sqrt()
    };
    let dense = sample_observations(&truth, &observation_times(40, 1.0, end), 1e-3, 1).unwrap();
    let dense_rmse = rmse(&dense, 1e-3);
    let sigma = s.observations.sigma;
    let sparse: Vec<f64> = (0..10)
        .map(|seed| {
            let obs = sample_observations(&truth, &observation_times(s.observations.count, s.observations.fraction, end), sigma, seed)
                .unwrap();
            rmse(&obs, sigma)
        })
        .collect();
    let worst = sparse.iter().copied().fold(0.0, f64::max);
    outcome(
        dense_rmse <= 5e-3 && worst <= 2.0 * sigma,
        format!("dense RMSE {dense_rmse:.2e}; sparse worst RMSE {worst:.4} over 10 seeds (limit {:.2})", 2.0 * sigma),
    )
}

// 4 -----------------------------------------------------------------------

fn posterior_identification(s: &Scenario, reports: &[RunReport]) -> Outcome {
    let first10 = &reports[..10];
    let dest = first10.iter().filter(|r| r.most_probable_destination() == s.target.destination).count();
    let rho = first10.iter().filter(|r| (r.rho_mean - s.target.turning_radius).abs() <= 0.01).count();
    outcome(
        dest >= 9 && rho >= 8,
        format!("destination identified {dest}/10, mean radius within 0.01 {rho}/10"),
    )
}

// 5 -----------------------------------------------------------------------

fn random_belief(rng: &mut ChaCha8Rng) -> (Belief, Vec<bool>, f64) {
    let (n1, n2) = (rng.random_range(8..20), rng.random_range(8..20));
    let k = rng.random_range(2..6);
    let grid = PlanGrid::uniform(n1, n2, [0.0, 0.0], [1.0, 1.0], 1.0, k).unwrap();
    let np = rng.random_range(1..4);
    let samples: Vec<ParamSample> = (0..np).map(|i| ParamSample::new(0.05, i, 1.0, 1.0).unwrap()).collect();
    let weights: Vec<f64> = (0..np).map(|_| rng.random_range(0.1..1.0)).collect();
    let densities: Vec<Vec<f64>> = (0..np).map(|_| (0..grid.len()).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    let mask: Vec<bool> = (0..grid.len()).map(|_| rng.random_bool(0.7)).collect();
    let radius = rng.random_range(0.05..0.25);
    (Belief::from_densities(grid, samples, weights, densities).unwrap(), mask, radius)
}

fn exhaustive_argmin(b: &Belief, mask: &[bool], radius: f64) -> (usize, usize, f64) {
    let g = &b.grid;
    let area = g.cell_area();
    let mut best: Option<(f64, usize, usize)> = None;
    for k in 0..g.n_slices() {
        for i in 0..g.n1 {
            for j in 0..g.n2 {
                let c = g.cell(i, j);
                if !mask[k * g.cells() + c] {
                    continue;
                }
                let x = g.position(c);
                let mut fail = 0.0;
                for p in 0..b.n_hypotheses() {
                    let slice = b.slice(p, k);
                    let mass: f64 = (0..g.cells())
                        .filter(|&d| {
                            let y = g.position(d);
                            (x[0] - y[0]).hypot(x[1] - y[1]) <= radius * (1.0 + 1e-9)
                        })
                        .map(|d| slice[d] * area)
                        .sum();
                    fail += b.weights[p] * (1.0 - mass);
                }
                let fail = fail.clamp(0.0, 1.0);
                if best.is_none_or(|(v, _, _)| fail < v - 1e-12) {
                    best = Some((fail, k, c));
                }
            }
        }
    }
    let (v, k, c) = best.unwrap();
    (k, c, v)
}

fn greedy_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut agree = 0;
    for _ in 0..20 {
        let (b, mask, radius) = random_belief(&mut rng);
        let field = failure_field(&b, radius, &mask).unwrap();
        let (k, c) = select_rendezvous(&field).unwrap();
        let (ok, oc, ov) = exhaustive_argmin(&b, &mask, radius);
        if (k, c) == (ok, oc) && (field.at(k, c) - ov).abs() <= 1e-12 {
            agree += 1;
        }
    }
    outcome(agree == 20, format!("{agree}/20 selections equal the exhaustive argmin"))
}

// 6 -----------------------------------------------------------------------

fn belief_invariants(pipeline: &Pipeline, seed: u64) -> Outcome {
    let run = pipeline.run(seed).unwrap();
    let mask = rendezvous::hjb::union_mask(&run.reach).unwrap();
    let cfg = pipeline.scenario.planner_config();
    let mut belief = run.belief;
    let (mut werr, mut serr): (f64, f64) = (0.0, 0.0);
    let mut updates = 0;
    for _ in 0..5 {
        let field = failure_field(&belief, cfg.contact_radius, &mask).unwrap();
        let Ok((k, c)) = select_rendezvous(&field) else { break };
        if update_on_failure(&mut belief, k, c, &cfg).is_err() {
            break;
        }
        updates += 1;
        let (w, s) = belief.normalization_errors();
        werr = werr.max(w);
        serr = serr.max(s);
    }
    outcome(
        updates == 5 && werr <= 1e-9 && serr <= 1e-6,
        format!("{updates} updates; max |sum w - 1| = {werr:.1e}, max slice error {serr:.1e}"),
    )
}

// 7 -----------------------------------------------------------------------

fn baseline_vs_planner(report: &RunReport, radius: f64, secs: f64) -> Outcome {
    let hits = report.outcomes.iter().filter(|o| o.hit).count();
    outcome(
        report.baseline_min_distance > radius && hits >= 1 && secs <= 300.0,
        format!(
            "baseline min distance {:.4} (R = {radius}); planner hits {hits}/{}; pipeline {secs:.0}s",
            report.baseline_min_distance,
            report.outcomes.len()
        ),
    )
}

// 8 -----------------------------------------------------------------------

fn reachability_semantics(pipeline: &Pipeline, restricted: &[rendezvous::hjb::ReachableSet]) -> Outcome {
    let mut s = pipeline.scenario.clone();
    s.pursuers.stations[0].headings = None;
    let open = rendezvous::sim::station_value_function(&s, 0).unwrap();
    let grid = &pipeline.plan_grid;
    let mut violations = 0;
    for vf in [&open, &pipeline.stations[0]] {
        let rs = reachable_set(vf, 0, grid, AngleFilter::Free, &[]).unwrap();
        for c in 0..grid.cells() {
            for k in 1..grid.n_slices() {
                if rs.is_reachable(k - 1, c) && !rs.is_reachable(k, c) {
                    violations += 1;
                }
            }
        }
    }
    let gaps: usize = restricted.iter().map(|r| r.gaps().len()).sum();
    outcome(
        violations == 0 && gaps >= 1,
        format!("free-angle monotonicity violations {violations}; perpendicular gap cells {gaps}"),
    )
}

// 9 -----------------------------------------------------------------------

fn calibration(reports: &[RunReport]) -> Outcome {
    let n = reports.len() as u64;
    let firsts: Vec<_> = reports.iter().filter_map(|r| r.outcomes.first()).collect();
    if firsts.len() as u64 != n {
        return outcome(false, "some runs produced no plan");
    }
    let p = firsts.iter().map(|o| o.predicted_success).sum::<f64>() / n as f64;
    let hits = firsts.iter().filter(|o| o.hit).count() as u64;
    let b = Binomial::new(p, n).unwrap();
    let lo = b.inverse_cdf(0.005);
    let hi = b.inverse_cdf(0.995);
    outcome(
        hits >= lo && hits <= hi,
        format!("mean predicted {p:.3}; realized {hits}/{n}; 99% band [{lo}, {hi}]"),
    )
}

fn main() {
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |id: u32, name: &'static str, o: Outcome| {
        println!("criterion {id} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };

    report(1, "HJB accuracy", hjb_accuracy());
    report(2, "GPR oracle equivalence", gpr_oracle());

    let scenario = common::shipped_scenario();
    report(3, "MAP recovery", map_recovery(&scenario));

    let start = Instant::now();
    let pipeline = Pipeline::prepare(&scenario).unwrap();
    let shipped = pipeline.run(scenario.seed).unwrap();
    let secs = start.elapsed().as_secs_f64();

    report(5, "greedy-step optimality", greedy_optimality());
    report(6, "belief invariants", belief_invariants(&pipeline, scenario.seed));
    report(
        7,
        "baseline failure vs planner success",
        baseline_vs_planner(&shipped.report, scenario.planner.contact_radius, secs),
    );
    report(8, "reachability semantics", reachability_semantics(&pipeline, &shipped.reach));

    let reports: Vec<RunReport> = (0..50).map(|seed| pipeline.run(seed).unwrap().report).collect();
    report(4, "posterior identification", posterior_identification(&scenario, &reports));
    report(9, "calibration", calibration(&reports));

    results.sort_by_key(|r| r.0);
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {}/{} criteria pass", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failing criteria: {failed:?}");
        if strict {
            std::process::exit(1);
        }
    }
}
