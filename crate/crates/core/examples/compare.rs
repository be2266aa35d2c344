//! Runs a scenario end to end and compares the planner against the
//! Kalman-filter / proportional-guidance baseline.
//!
//! ```text
//! cargo run --release --example compare -- scenarios/slow_pursuer.json [seed]
//! ```

use rendezvous::sim::{Pipeline, Scenario};
use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/slow_pursuer.json"));
    let scenario = Scenario::from_path(&path)?;
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(scenario.seed);

    let pipeline = Pipeline::prepare(&scenario)?;
    for t in &pipeline.timings {
        println!("{:>28}: {:6.2}s", t.stage, t.seconds);
    }
    let out = pipeline.run(seed)?;
    for t in &out.timings {
        println!("{:>28}: {:6.2}s", t.stage, t.seconds);
    }
    let r = &out.report;
    println!("truth arrives at t = {:.3}", r.truth_arrival_time);
    println!("destination posterior: {:?}", r.destination_posterior);
    println!("posterior mean turning radius: {:.4}", r.rho_mean);
    for o in &r.outcomes {
        println!(
            "  t = {:.3} x = ({:.3}, {:.3})  predicted {:.3}  miss {:.4}  {}",
            o.t,
            o.x[0],
            o.x[1],
            o.predicted_success,
            o.distance,
            if o.hit { "HIT" } else { "miss" }
        );
    }
    println!("planner hit: {}", r.any_hit);
    println!("baseline min distance: {:.4} at t = {:.3}", r.baseline_min_distance, r.baseline_min_distance_time);
    Ok(())
}
