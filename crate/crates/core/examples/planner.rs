//! Greedy rendezvous planning on a synthetic two-hypothesis belief: a target
//! that turns either north or south, a free-angle station, and the
//! conditional failure probability of each successive attempt.
//!
//! ```text
//! cargo run --release --example planner
//! ```

use rendezvous::gp_posterior::Belief;
use rendezvous::hjb::{reachable_set, solve_hjb, AngleFilter, DiskRegion, Grid3, HjbConfig, Motion, PlanGrid, TargetSet};
use rendezvous::map_estimator::ParamSample;
use rendezvous::planner::{plan, PlannerConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = PlanGrid::uniform(81, 81, [0.0, 0.0], [1.0, 1.0], 0.8, 24)?;
    let mean = |branch: f64, t: f64| [0.9 - 0.6 * t, 0.5 + branch * 0.4 * t * t];
    let sd = 0.04;
    let g = &grid;
    let densities: Vec<Vec<f64>> = [1.0, -1.0]
        .iter()
        .map(|&b| {
            g.times
                .iter()
                .flat_map(|&t| {
                    let m = mean(b, t);
                    (0..g.cells()).map(move |c| {
                        let x = g.position(c);
                        (-((x[0] - m[0]).powi(2) + (x[1] - m[1]).powi(2)) / (2.0 * sd * sd)).exp()
                    })
                })
                .collect()
        })
        .collect();
    let samples = vec![ParamSample::new(0.05, 0, 1.0, 0.5)?, ParamSample::new(0.05, 1, 1.0, 0.5)?];
    let belief = Belief::from_densities(grid.clone(), samples, vec![0.6, 0.4], densities)?;

    let station = solve_hjb(
        &TargetSet::disk(DiskRegion::new([0.5, 0.3], 0.02)?),
        0.05,
        0.3,
        Grid3::unit(81, 81, 48),
        Motion::Backward,
        &HjbConfig::default(),
    )?;
    let reach = reachable_set(&station, 0, &grid, AngleFilter::Free, &[])?;
    let result = plan(belief, 4, &[reach], &PlannerConfig::new(0.04))?;

    for (i, (p, f)) in result.points.iter().zip(&result.conditional_failures).enumerate() {
        println!(
            "attempt {i}: t = {:.3} at ({:.3}, {:.3}), P(fail | earlier failed) = {f:.3}, launch {:.3}, slack {:.3}",
            p.t,
            p.x[0],
            p.x[1],
            p.launch_time.unwrap_or(f64::NAN),
            p.slack.unwrap_or(f64::NAN)
        );
    }
    println!("overall failure probability {:.4}", result.overall_failure);
    println!("hypothesis weights after planned failures {:?}", result.final_weights);
    Ok(())
}
