//! Kalman filter plus proportional guidance against a target seen only at a
//! few early times, for an evenly matched and a slow pursuer.
//!
//! ```text
//! cargo run --release --example baseline
//! ```

use rendezvous::baseline::{run_baseline, BaselineConfig, PursuerState};
use rendezvous::hjb::State;
use rendezvous::sim::{generate_truth, observation_times, sample_observations, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/slow_pursuer.json");
    let s = Scenario::from_path(&path)?;
    let truth = generate_truth(&s)?;
    let end = truth.last().unwrap().t;
    let o = &s.observations;
    let obs = sample_observations(&truth, &observation_times(o.count, o.fraction, end), o.sigma, s.seed)?;
    let [x1, x2, th] = s.baseline.start;
    let cfg = BaselineConfig {
        dt: s.baseline.dt,
        q: s.baseline.q,
        horizon: s.grids.horizon,
    };

    for (label, speed, rho) in [("evenly matched", 1.0, s.target.turning_radius), ("slow", s.pursuers.speed, s.pursuers.turning_radius)] {
        let pursuer = PursuerState::new(State::new(x1, x2, th), speed, rho)?;
        let r = run_baseline(&truth, &obs, pursuer, &cfg)?;
        println!(
            "{label:>15} pursuer: closest approach {:.4} at t = {:.3} (contact radius {})",
            r.min_distance, r.min_distance_time, s.planner.contact_radius
        );
    }
    Ok(())
}
