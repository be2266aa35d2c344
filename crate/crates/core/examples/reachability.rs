//! Reachable sets of a slow pursuer station with and without launch-heading
//! restrictions, including the perpendicular-contact filter and its gaps.
//!
//! ```text
//! cargo run --release --example reachability
//! ```

use rendezvous::hjb::{
    reachable_set, solve_hjb, AngleFilter, DiskRegion, Grid3, HjbConfig, MeanTrack, Motion, PlanGrid, TargetSet,
};
use std::f64::consts::PI;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let disk = DiskRegion::new([0.35, 0.45], 0.02)?;
    let grid = Grid3::unit(101, 101, 64);
    let plan = PlanGrid::uniform(101, 101, [0.0, 0.0], [1.0, 1.0], 0.7, 36)?;
    // A westbound straight-line target track along x2 = 0.5.
    let track = MeanTrack {
        points: plan.times.iter().map(|&t| [0.8 - t, 0.5]).collect(),
        headings: vec![PI; plan.n_slices()],
    };

    for (label, target) in [
        ("unrestricted", TargetSet::disk(disk)),
        ("east/west launch", TargetSet::with_headings(disk, vec![0.0, PI])),
    ] {
        let station = solve_hjb(&target, 0.05, 0.3, grid, Motion::Backward, &HjbConfig::default())?;
        for filter in [AngleFilter::Free, AngleFilter::Perpendicular] {
            let rs = reachable_set(&station, 0, &plan, filter, std::slice::from_ref(&track))?;
            let last = rs.slice(plan.n_slices() - 1).iter().filter(|&&b| b).count();
            println!(
                "{label:>17} {filter:?}: {last} reachable cells at t = {:.2}, {} gap cells",
                plan.times[plan.n_slices() - 1],
                rs.gaps().len()
            );
        }
    }
    Ok(())
}
