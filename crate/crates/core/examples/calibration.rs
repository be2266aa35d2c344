//! Ensemble over observation seeds: compares the predicted success
//! probability of the first planned point with its realized hit rate and
//! tallies destination / turning-radius identification.
//!
//! ```text
//! cargo run --release --example calibration -- scenarios/slow_pursuer.json 50
//! ```

use rendezvous::sim::{Pipeline, Scenario};
use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/slow_pursuer.json"));
    let n: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20);
    let scenario = Scenario::from_path(&path)?;
    let pipeline = Pipeline::prepare(&scenario)?;

    let (mut predicted, mut hits, mut dest_ok, mut rho_ok) = (0.0, 0, 0, 0);
    for seed in 0..n {
        let r = pipeline.run(seed)?.report;
        let first = r.outcomes.first().ok_or("empty plan")?;
        predicted += first.predicted_success;
        hits += usize::from(first.hit);
        dest_ok += usize::from(r.most_probable_destination() == scenario.target.destination);
        rho_ok += usize::from((r.rho_mean - scenario.target.turning_radius).abs() <= 0.01);
        println!(
            "seed {seed:3}: p = {:.3} miss = {:.4} hit = {} dest = {:?} rho = {:.4}",
            first.predicted_success,
            first.distance,
            first.hit,
            r.destination_posterior.iter().map(|m| format!("{m:.3}")).collect::<Vec<_>>(),
            r.rho_mean
        );
    }
    let p = predicted / n as f64;
    println!("mean predicted {p:.3}, realized {:.3} ({hits}/{n})", hits as f64 / n as f64);
    println!("destination identified {dest_ok}/{n}, turning radius within 0.01 {rho_ok}/{n}");
    Ok(())
}
