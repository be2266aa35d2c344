//! Gauss–Seidel fast sweeping for the stationary Dubins HJB equation
//!
//! ```text
//! 0 = s cos(θ) u_x1 + s sin(θ) u_x2 - |u_θ| / ρ + 1 / v,   u = 0 on the target set
//! ```
//!
//! with `s = ±1` the motion sense. Each node is updated with a first-order
//! semi-Lagrangian upwind step over the three extremal controls:
//!
//! ```text
//! u(x, θ_k) = min { h/v + u(x + s h e(θ_k), θ_k),
//!                   ρ hθ/v + u(arc_±(x), θ_k ± hθ) }
//! ```
//!
//! where the straight step covers one cell width and the turning steps are
//! the exact circular arcs that change the heading by one heading cell, so
//! turns land on a neighbouring heading slice. Off-node feet are resolved by
//! bilinear interpolation within the slice, and a straight step whose stencil
//! contains the node itself is solved implicitly.
//!
//! Iteration starts from a large finite value rather than infinity so that the
//! sweeps converge to the minimal fixed point; an infinite start would be
//! absorbing under interpolation and freeze the reached region. Domain walls
//! are obstacles charged the same exit cost. After convergence, nodes whose
//! value exceeds half the exit cost (a hundred times the longest wall-free
//! path) are flagged unreached with `f64::INFINITY`.

use super::{Grid3, Motion, State, TargetSet, ValueFunction};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HjbConfig {
    /// Convergence threshold on the largest update within one iteration (time units).
    pub tolerance: f64,
    /// Maximum number of iterations; each iteration performs all eight sweep orderings.
    pub max_iterations: usize,
}

impl Default for HjbConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 1000,
        }
    }
}

/// Values at or above this bound are reported as unreached.
fn plausibility_bound(grid: &Grid3, radius: f64, speed: f64) -> f64 {
    let diag = (grid.hi[0] - grid.lo[0]).hypot(grid.hi[1] - grid.lo[1]);
    100.0 * (diag + std::f64::consts::TAU * radius) / speed
}

/// One control's foot point, expressed as a bilinear stencil relative to the node.
#[derive(Debug, Clone, Copy)]
struct Stencil {
    slice: usize,
    cost: f64,
    corners: [(isize, isize, f64); 4],
}

impl Stencil {
    fn new(slice: usize, cost: f64, di: f64, dj: f64) -> Self {
        let bi = di.floor();
        let bj = dj.floor();
        let (fi, fj) = (di - bi, dj - bj);
        let snap = |f: f64| if f < 1e-12 { 0.0 } else if f > 1.0 - 1e-12 { 1.0 } else { f };
        let (fi, fj) = (snap(fi), snap(fj));
        let (bi, bj) = (bi as isize, bj as isize);
        Self {
            slice,
            cost,
            corners: [
                (bi, bj, (1.0 - fi) * (1.0 - fj)),
                (bi + 1, bj, fi * (1.0 - fj)),
                (bi, bj + 1, (1.0 - fi) * fj),
                (bi + 1, bj + 1, fi * fj),
            ],
        }
    }
}

struct SliceStencils {
    controls: Vec<Stencil>,
    /// Quadrant of the sweep ordering that follows this slice's characteristics.
    ordering: usize,
}

fn slice_stencils(grid: &Grid3, k: usize, sense: f64, radius: f64, speed: f64) -> SliceStencils {
    let (h1, h2, ht) = (grid.h1(), grid.h2(), grid.h_theta());
    let nt = grid.n_theta;
    let th = grid.theta(k);
    let step = h1.min(h2);
    let (dx, dy) = (sense * step * th.cos(), sense * step * th.sin());
    let mut controls = vec![Stencil::new(k, step / speed, dx / h1, dy / h2)];
    for alpha in [1.0f64, -1.0] {
        let th2 = th + alpha * ht;
        let ax = sense * radius / alpha * (th2.sin() - th.sin());
        let ay = sense * radius / alpha * (th.cos() - th2.cos());
        let slice = if alpha > 0.0 { (k + 1) % nt } else { (k + nt - 1) % nt };
        controls.push(Stencil::new(slice, radius * ht / speed, ax / h1, ay / h2));
    }
    let sx = if dx.abs() < 1e-14 { 0.0 } else { dx };
    let sy = if dy.abs() < 1e-14 { 0.0 } else { dy };
    // Downstream nodes first: moving towards +x means x is swept descending.
    let ordering = usize::from(sx > 0.0) | (usize::from(sy > 0.0) << 1);
    SliceStencils { controls, ordering }
}

pub fn solve_hjb(
    target: &TargetSet,
    turning_radius: f64,
    speed: f64,
    grid: Grid3,
    motion: Motion,
    config: &HjbConfig,
) -> Result<ValueFunction> {
    if !(turning_radius > 0.0) {
        return Err(Error::invalid(format!(
            "turning radius must be positive, got {turning_radius}"
        )));
    }
    if !(speed > 0.0) {
        return Err(Error::invalid(format!("speed must be positive, got {speed}")));
    }
    grid.validate()?;

    let (n1, n2, nt) = (grid.n1, grid.n2, grid.n_theta);
    let sense = motion.sign();
    let heading_tol = 0.5 * grid.h_theta();

    let plausible = plausibility_bound(&grid, turning_radius, speed);
    // Initial value and wall exit cost.
    let exit_cost = 2.0 * plausible;
    let mut values = vec![exit_cost; grid.len()];
    let mut fixed = vec![false; grid.len()];
    for k in 0..nt {
        let th = grid.theta(k);
        for j in 0..n2 {
            for i in 0..n1 {
                let s = State::new(grid.x1(i), grid.x2(j), th);
                if target.contains(&s, heading_tol) {
                    let idx = grid.index(i, j, k);
                    values[idx] = 0.0;
                    fixed[idx] = true;
                }
            }
        }
    }
    if !fixed.iter().any(|&f| f) {
        return Err(Error::invalid("target set contains no grid node"));
    }

    let stencils: Vec<SliceStencils> = (0..nt)
        .map(|k| slice_stencils(&grid, k, sense, turning_radius, speed))
        .collect();

    let stride_k = n1 * n2;
    let mut iterations = 0;
    let mut max_update = f64::INFINITY;

    while iterations < config.max_iterations {
        iterations += 1;
        max_update = 0.0;
        for theta_ascending in [true, false] {
            for ordering in 0..4 {
                let x_desc = ordering & 1 == 1;
                let y_desc = ordering & 2 == 2;
                for kk in 0..nt {
                    let k = if theta_ascending { kk } else { nt - 1 - kk };
                    let sl = &stencils[k];
                    if sl.ordering != ordering {
                        continue;
                    }
                    for jj in 0..n2 {
                        let j = if y_desc { n2 - 1 - jj } else { jj };
                        for ii in 0..n1 {
                            let i = if x_desc { n1 - 1 - ii } else { ii };
                            let idx = i + n1 * j + stride_k * k;
                            if fixed[idx] {
                                continue;
                            }
                            let mut best = f64::INFINITY;
                            for st in &sl.controls {
                                let base = stride_k * st.slice;
                                let mut acc = st.cost;
                                let mut self_w = 0.0;
                                for &(di, dj, w) in &st.corners {
                                    if w == 0.0 {
                                        continue;
                                    }
                                    let (ci, cj) = (i as isize + di, j as isize + dj);
                                    if ci < 0 || cj < 0 || ci >= n1 as isize || cj >= n2 as isize {
                                        acc += w * exit_cost;
                                        continue;
                                    }
                                    let cidx = base + ci as usize + n1 * cj as usize;
                                    if cidx == idx {
                                        self_w += w;
                                        continue;
                                    }
                                    acc += w * values[cidx];
                                }
                                let cand = if self_w > 0.0 { acc / (1.0 - self_w) } else { acc };
                                if cand < best {
                                    best = cand;
                                }
                            }
                            let old = values[idx];
                            if best < old {
                                if best < plausible {
                                    let delta = old - best;
                                    if delta > max_update {
                                        max_update = delta;
                                    }
                                }
                                values[idx] = best;
                            }
                        }
                    }
                }
            }
        }
        if max_update < config.tolerance {
            break;
        }
    }

    if max_update >= config.tolerance {
        return Err(Error::HjbNotConverged {
            sweeps: iterations,
            max_update,
        });
    }

    for u in values.iter_mut() {
        if *u >= plausible {
            *u = f64::INFINITY;
        }
    }

    Ok(ValueFunction {
        grid,
        values,
        target: target.clone(),
        speed,
        turning_radius,
        motion,
        sweeps: iterations,
    })
}

/// Largest residual of the discrete update over non-target, reached nodes.
pub fn upwind_residual(vf: &ValueFunction) -> f64 {
    let g = &vf.grid;
    let stencils: Vec<SliceStencils> = (0..g.n_theta)
        .map(|k| slice_stencils(g, k, vf.motion.sign(), vf.turning_radius, vf.speed))
        .collect();
    let tol = vf.heading_tolerance();
    let mut worst: f64 = 0.0;
    for k in 0..g.n_theta {
        for j in 0..g.n2 {
            for i in 0..g.n1 {
                let u = vf.node(i, j, k);
                if !u.is_finite() || vf.target.contains(&State::new(g.x1(i), g.x2(j), g.theta(k)), tol) {
                    continue;
                }
                let mut best = f64::INFINITY;
                for st in &stencils[k].controls {
                    let mut acc = st.cost;
                    let mut ok = true;
                    for &(di, dj, w) in &st.corners {
                        if w == 0.0 {
                            continue;
                        }
                        let (ci, cj) = (i as isize + di, j as isize + dj);
                        if ci < 0 || cj < 0 || ci >= g.n1 as isize || cj >= g.n2 as isize {
                            ok = false;
                            break;
                        }
                        acc += w * vf.node(ci as usize, cj as usize, st.slice);
                    }
                    if ok && acc < best {
                        best = acc;
                    }
                }
                if best.is_finite() {
                    worst = worst.max((best - u).abs());
                }
            }
        }
    }
    worst
}
