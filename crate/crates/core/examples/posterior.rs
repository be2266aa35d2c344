//! Bayesian identification of destination and turning radius: one MAP fit
//! and GP correction per hypothesis, then posterior weights and a belief
//! density slice written as CSV.
//!
//! ```text
//! cargo run --release --example posterior -- [seed] [out_dir]
//! ```

use rendezvous::sim::{Pipeline, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let out = args.next().unwrap_or_else(|| "posterior_out".into());
    std::fs::create_dir_all(&out)?;

    let path = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/slow_pursuer.json");
    let mut s = Scenario::from_path(&path)?;
    s.planner.attempts = 1;
    let pipeline = Pipeline::prepare(&s)?;
    let run = pipeline.run(seed)?;
    let r = &run.report;

    println!("{:>8} {:>5} {:>12} {:>10}", "rho", "dest", "log-lik", "weight");
    for h in &r.hypotheses {
        println!("{:>8.4} {:>5} {:>12.3} {:>10.4}", h.rho, h.dest_index, h.log_likelihood, h.weight);
    }
    println!("destination masses {:?}", r.destination_posterior);
    println!("posterior mean radius {:.4} (true {})", r.rho_mean, s.target.turning_radius);

    let k = run.belief.grid.n_slices() / 2;
    let csv = run.belief.write_density_csv(k, &std::path::Path::new(&out).join("density.csv"))?;
    println!("mixture density at t = {:.3} written to {}", run.belief.grid.times[k], csv.display());
    Ok(())
}
