//! Minimum-arrival-time value functions for the Dubins car.
//!
//! A [`ValueFunction`] stores `u(x1, x2, θ)` on a uniform grid that is
//! periodic in heading. Two motion senses are supported: [`Motion::Forward`]
//! measures the time for a car at `(x, θ)` to reach the target set, while
//! [`Motion::Backward`] measures the time for a car launched from the target
//! set to arrive at `(x, θ)`. The latter is how pursuer base stations are
//! solved once and then queried for every candidate rendezvous state.

mod control;
mod dump;
mod reach;
mod solver;

pub use control::{extract_trajectory, optimal_heading_rate, state_at, PathSample};
pub use dump::{
    decode_mask_rle, encode_mask_rle, read_mask_rle, read_value_function, write_reachable_set,
    write_value_function, ValueFunctionMeta,
};
pub use reach::{
    pursuer_path, reachable_set, union_mask, AngleFilter, MeanTrack, PlanGrid, PursuerPath,
    ReachableSet,
};
pub use solver::{solve_hjb, upwind_residual, HjbConfig};

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};

/// Wrap an angle into `[0, 2π)`.
#[inline]
pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Signed angular difference `a - b` in `(-π, π]`.
#[inline]
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

/// Planar configuration: position plus heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x1: f64,
    pub x2: f64,
    pub theta: f64,
}

impl State {
    pub fn new(x1: f64, x2: f64, theta: f64) -> Self {
        Self {
            x1,
            x2,
            theta: wrap_angle(theta),
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x1, self.x2]
    }

    pub fn distance_to(&self, p: [f64; 2]) -> f64 {
        (self.x1 - p[0]).hypot(self.x2 - p[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiskRegion {
    pub center: [f64; 2],
    pub radius: f64,
}

impl DiskRegion {
    pub fn new(center: [f64; 2], radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::invalid(format!("disk radius must be positive, got {radius}")));
        }
        Ok(Self { center, radius })
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (p[0] - self.center[0]).hypot(p[1] - self.center[1]) <= self.radius
    }

    pub fn distance(&self, p: [f64; 2]) -> f64 {
        ((p[0] - self.center[0]).hypot(p[1] - self.center[1]) - self.radius).max(0.0)
    }
}

/// Zero-level set of a value function: a disk in position, optionally
/// restricted to a finite list of headings (launch constraints).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSet {
    pub disk: DiskRegion,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub headings: Option<Vec<f64>>,
}

impl TargetSet {
    pub fn disk(disk: DiskRegion) -> Self {
        Self {
            disk,
            headings: None,
        }
    }

    pub fn with_headings(disk: DiskRegion, headings: Vec<f64>) -> Self {
        Self {
            disk,
            headings: Some(headings),
        }
    }

    /// Membership with a heading tolerance (ignored for unrestricted sets).
    pub fn contains(&self, s: &State, heading_tol: f64) -> bool {
        if !self.disk.contains(s.position()) {
            return false;
        }
        match &self.headings {
            None => true,
            Some(hs) => hs
                .iter()
                .any(|&h| angle_diff(s.theta, h).abs() <= heading_tol + 1e-12),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    /// Time for a car at the queried state to reach the target set.
    Forward,
    /// Time for a car launched from the target set to arrive at the queried state.
    Backward,
}

impl Motion {
    pub fn sign(self) -> f64 {
        match self {
            Motion::Forward => 1.0,
            Motion::Backward => -1.0,
        }
    }
}

/// Uniform `(x1, x2, θ)` grid; positions include both walls, θ is periodic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid3 {
    pub n1: usize,
    pub n2: usize,
    pub n_theta: usize,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Grid3 {
    pub fn unit(n1: usize, n2: usize, n_theta: usize) -> Self {
        Self {
            n1,
            n2,
            n_theta,
            lo: [0.0, 0.0],
            hi: [1.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n1 < 3 || self.n2 < 3 || self.n_theta < 3 {
            return Err(Error::invalid("grid needs at least 3 nodes per axis"));
        }
        if !(self.hi[0] > self.lo[0] && self.hi[1] > self.lo[1]) {
            return Err(Error::invalid("grid bounds are empty"));
        }
        Ok(())
    }

    pub fn h1(&self) -> f64 {
        (self.hi[0] - self.lo[0]) / (self.n1 - 1) as f64
    }

    pub fn h2(&self) -> f64 {
        (self.hi[1] - self.lo[1]) / (self.n2 - 1) as f64
    }

    pub fn h_theta(&self) -> f64 {
        TAU / self.n_theta as f64
    }

    pub fn len(&self) -> usize {
        self.n1 * self.n2 * self.n_theta
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n1 * (j + self.n2 * k)
    }

    pub fn x1(&self, i: usize) -> f64 {
        self.lo[0] + i as f64 * self.h1()
    }

    pub fn x2(&self, j: usize) -> f64 {
        self.lo[1] + j as f64 * self.h2()
    }

    pub fn theta(&self, k: usize) -> f64 {
        k as f64 * self.h_theta()
    }

    pub fn contains_position(&self, p: [f64; 2]) -> bool {
        let eps = 1e-12;
        p[0] >= self.lo[0] - eps
            && p[0] <= self.hi[0] + eps
            && p[1] >= self.lo[1] - eps
            && p[1] <= self.hi[1] + eps
    }

    /// Largest of the two position cell widths.
    pub fn cell_width(&self) -> f64 {
        self.h1().max(self.h2())
    }
}

/// Gridded minimum-arrival-time field for one target set and turning radius.
///
/// Unreached nodes hold `f64::INFINITY`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueFunction {
    pub grid: Grid3,
    pub values: Vec<f64>,
    pub target: TargetSet,
    pub speed: f64,
    pub turning_radius: f64,
    pub motion: Motion,
    pub sweeps: usize,
}

impl ValueFunction {
    #[inline]
    pub fn node(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.grid.index(i, j, k)]
    }

    /// Trilinear interpolation, periodic in heading. Returns `f64::INFINITY`
    /// when any corner of the enclosing cell is unreached.
    pub fn eval(&self, s: &State) -> Result<f64> {
        let g = &self.grid;
        if !g.contains_position(s.position()) || !s.x1.is_finite() || !s.x2.is_finite() {
            return Err(Error::OutOfDomain { x1: s.x1, x2: s.x2 });
        }
        Ok(self.eval_clamped(s.x1, s.x2, s.theta))
    }

    /// Interpolation with positions clamped to the domain.
    pub fn eval_clamped(&self, x1: f64, x2: f64, theta: f64) -> f64 {
        let g = &self.grid;
        let (i0, f1) = locate(x1, g.lo[0], g.h1(), g.n1);
        let (j0, f2) = locate(x2, g.lo[1], g.h2(), g.n2);
        let tq = wrap_angle(theta) / g.h_theta();
        let k0 = (tq.floor() as usize).min(g.n_theta - 1);
        let f3 = tq - k0 as f64;
        let k1 = (k0 + 1) % g.n_theta;
        let i1 = (i0 + 1).min(g.n1 - 1);
        let j1 = (j0 + 1).min(g.n2 - 1);

        let mut acc = 0.0;
        for (k, wk) in [(k0, 1.0 - f3), (k1, f3)] {
            for (j, wj) in [(j0, 1.0 - f2), (j1, f2)] {
                for (i, wi) in [(i0, 1.0 - f1), (i1, f1)] {
                    let w = wi * wj * wk;
                    let v = self.node(i, j, k);
                    if w == 0.0 {
                        continue;
                    }
                    if !v.is_finite() {
                        return f64::INFINITY;
                    }
                    acc += w * v;
                }
            }
        }
        acc
    }

    /// `∂u/∂θ` by a centered difference of width one heading cell.
    pub fn d_theta(&self, s: &State) -> Result<f64> {
        let h = self.grid.h_theta();
        let up = self.eval(&State::new(s.x1, s.x2, s.theta + h))?;
        let dn = self.eval(&State::new(s.x1, s.x2, s.theta - h))?;
        Ok((up - dn) / (2.0 * h))
    }

    /// Minimum of the nodal values over all headings, interpolated in position.
    pub fn min_over_heading(&self, p: [f64; 2]) -> Result<(f64, f64)> {
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..self.grid.n_theta {
            let th = self.grid.theta(k);
            let v = self.eval(&State::new(p[0], p[1], th))?;
            if v < best.0 {
                best = (v, th);
            }
        }
        Ok(best)
    }

    /// Tolerance used when testing heading membership in the target set.
    pub fn heading_tolerance(&self) -> f64 {
        0.5 * self.grid.h_theta()
    }

    pub fn max_turn_rate(&self) -> f64 {
        self.speed / self.turning_radius
    }
}

#[inline]
fn locate(x: f64, lo: f64, h: f64, n: usize) -> (usize, f64) {
    let mut q = ((x - lo) / h).clamp(0.0, (n - 1) as f64);
    // Coordinates within rounding of a node evaluate to that node exactly.
    if (q - q.round()).abs() < 1e-9 {
        q = q.round();
    }
    let i = (q.floor() as usize).min(n - 2);
    (i, q - i as f64)
}
