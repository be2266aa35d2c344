//! Minimum-time value function for a Dubins car heading to a disk, the
//! optimal path from one start state, and a binary dump of the field.
//!
//! ```text
//! cargo run --release --example value_function -- [out_dir]
//! ```

use rendezvous::hjb::{
    extract_trajectory, solve_hjb, upwind_residual, write_value_function, DiskRegion, Grid3, HjbConfig, Motion,
    State, TargetSet,
};
use std::f64::consts::FRAC_PI_2;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "value_function_out".into());
    std::fs::create_dir_all(&out)?;

    let target = TargetSet::disk(DiskRegion::new([0.15, 0.5], 0.03)?);
    let vf = solve_hjb(&target, 0.055, 1.0, Grid3::unit(101, 101, 64), Motion::Forward, &HjbConfig::default())?;
    println!("converged after {} iterations, residual {:.2e}", vf.sweeps, upwind_residual(&vf));

    let start = State::new(0.8, 0.5, FRAC_PI_2);
    println!("u(start) = {:.4}", vf.eval(&start)?);
    let path = extract_trajectory(&vf, &start, 1e-3)?;
    for p in path.iter().step_by(100) {
        println!("t = {:.3}  ({:.3}, {:.3}, {:+.3})", p.t, p.state.x1, p.state.x2, p.state.theta);
    }
    let last = path.last().unwrap();
    println!("arrives at t = {:.4}, ({:.3}, {:.3})", last.t, last.state.x1, last.state.x2);

    let [bin, meta] = write_value_function(&vf, std::path::Path::new(&out), "value")?;
    println!("wrote {} and {}", bin.display(), meta.display());
    Ok(())
}
