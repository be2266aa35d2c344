//! Fits the ODE-constrained MAP trajectory to six noisy readings of a target
//! and reports how far the fit is from the true path.
//!
//! ```text
//! cargo run --release --example map_fit -- [seed]
//! ```

use rendezvous::hjb::state_at;
use rendezvous::kernels::KernelSpec;
use rendezvous::map_estimator::{fit_map, uniform_collocation, DubinsClosedLoop, FitConfig, ParamSample};
use rendezvous::sim::{generate_truth, observation_times, sample_observations, target_value_function, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let path = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/slow_pursuer.json");
    let s = Scenario::from_path(&path)?;

    let truth = generate_truth(&s)?;
    let end = truth.last().unwrap().t;
    let sigma = s.observations.sigma;
    let times = observation_times(s.observations.count, s.observations.fraction, end);
    let obs = sample_observations(&truth, &times, sigma, seed)?;

    let vf = target_value_function(&s, s.target.destination, s.target.turning_radius)?;
    let dynamics = DubinsClosedLoop::new(&vf)?;
    let param = ParamSample::new(s.target.turning_radius, s.target.destination, 1.0, 1.0)?;
    let spec = KernelSpec::new(s.estimation.map_lengthscale, s.estimation.map_output_scale)?;
    let cfg = FitConfig {
        nugget: s.estimation.nugget,
        ..FitConfig::default()
    };
    let fit = fit_map(
        &obs,
        Some(param),
        &[spec; 3],
        &uniform_collocation(s.grids.horizon, s.estimation.collocation),
        &[sigma; 3],
        &dynamics,
        &cfg,
    )?;
    println!("objective {:.4} after {} iterations", fit.objective, fit.iterations);

    let mut se = 0.0;
    for k in 0..=20 {
        let t = end * k as f64 / 20.0;
        let z = fit.eval(t);
        let p = state_at(&truth, t).unwrap();
        let e = (z[0] - p.x1).hypot(z[1] - p.x2);
        se += e * e;
        println!("t = {t:.3}  fit ({:.3}, {:.3})  truth ({:.3}, {:.3})  error {e:.4}", z[0], z[1], p.x1, p.x2);
    }
    println!("RMSE {:.4}", (se / 21.0).sqrt());
    Ok(())
}
