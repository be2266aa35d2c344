use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use super::control::{extract_trajectory, PathSample};
use super::{Motion, State, ValueFunction};
use crate::error::{Error, Result};

/// Spatiotemporal planning grid shared by beliefs, reachable sets and the planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanGrid {
    pub n1: usize,
    pub n2: usize,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub times: Vec<f64>,
}

impl PlanGrid {
    pub fn new(n1: usize, n2: usize, lo: [f64; 2], hi: [f64; 2], times: Vec<f64>) -> Result<Self> {
        if n1 < 2 || n2 < 2 || times.is_empty() {
            return Err(Error::invalid("planning grid needs >= 2 nodes per axis and >= 1 time"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("planning times must be strictly increasing"));
        }
        Ok(Self { n1, n2, lo, hi, times })
    }

    /// `k` uniform slices over `[0, horizon]`.
    pub fn uniform(n1: usize, n2: usize, lo: [f64; 2], hi: [f64; 2], horizon: f64, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("need at least one time slice"));
        }
        let times = if k == 1 {
            vec![horizon]
        } else {
            (0..k).map(|i| horizon * i as f64 / (k - 1) as f64).collect()
        };
        Self::new(n1, n2, lo, hi, times)
    }

    pub fn h1(&self) -> f64 {
        (self.hi[0] - self.lo[0]) / (self.n1 - 1) as f64
    }

    pub fn h2(&self) -> f64 {
        (self.hi[1] - self.lo[1]) / (self.n2 - 1) as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.h1() * self.h2()
    }

    pub fn cells(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn n_slices(&self) -> usize {
        self.times.len()
    }

    pub fn len(&self) -> usize {
        self.cells() * self.n_slices()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> usize {
        i + self.n1 * j
    }

    pub fn position(&self, cell: usize) -> [f64; 2] {
        let (i, j) = (cell % self.n1, cell / self.n1);
        [self.lo[0] + i as f64 * self.h1(), self.lo[1] + j as f64 * self.h2()]
    }

    pub fn same_layout(&self, other: &PlanGrid) -> bool {
        self.n1 == other.n1
            && self.n2 == other.n2
            && self.lo == other.lo
            && self.hi == other.hi
            && self.times.len() == other.times.len()
            && self.times.iter().zip(&other.times).all(|(a, b)| (a - b).abs() <= 1e-12)
    }

    /// Index of the slice whose time equals `t` (to 1e-9).
    pub fn slice_at(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= 1e-9)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleFilter {
    /// Any arrival heading.
    Free,
    /// Arrive perpendicular to the nearest mean target trajectory point.
    Perpendicular,
}

/// Mean target positions and headings at each planning slice for one hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanTrack {
    pub points: Vec<[f64; 2]>,
    pub headings: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReachableSet {
    pub station: usize,
    pub filter: AngleFilter,
    pub grid: PlanGrid,
    /// Slice-major boolean mask.
    pub mask: Vec<bool>,
    /// Arrival heading achieving the reachability test (NaN where unreachable).
    pub contact_heading: Vec<f64>,
    /// Station arrival time at that heading.
    pub arrival_time: Vec<f64>,
}

impl ReachableSet {
    #[inline]
    pub fn index(&self, slice: usize, cell: usize) -> usize {
        slice * self.grid.cells() + cell
    }

    pub fn is_reachable(&self, slice: usize, cell: usize) -> bool {
        self.mask[self.index(slice, cell)]
    }

    pub fn slice(&self, slice: usize) -> &[bool] {
        let c = self.grid.cells();
        &self.mask[slice * c..(slice + 1) * c]
    }

    /// Cells reachable at an earlier slice but not at a later one.
    pub fn gaps(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for cell in 0..self.grid.cells() {
            let mut seen = false;
            for s in 0..self.grid.n_slices() {
                let m = self.is_reachable(s, cell);
                if seen && !m {
                    out.push((s, cell));
                    break;
                }
                seen |= m;
            }
        }
        out
    }
}

/// Union of several station masks on a shared grid.
pub fn union_mask(sets: &[ReachableSet]) -> Result<Vec<bool>> {
    let first = sets
        .first()
        .ok_or_else(|| Error::invalid("no reachable sets to combine"))?;
    let mut out = first.mask.clone();
    for s in &sets[1..] {
        if !s.grid.same_layout(&first.grid) {
            return Err(Error::GridMismatch("reachable sets use different grids".into()));
        }
        for (o, &m) in out.iter_mut().zip(&s.mask) {
            *o |= m;
        }
    }
    Ok(out)
}

/// `mask[t][x] = u_station(x, θ_req) <= t` with the heading requirement given
/// by `filter`.
pub fn reachable_set(
    station_value: &ValueFunction,
    station: usize,
    grid: &PlanGrid,
    filter: AngleFilter,
    mean_tracks: &[MeanTrack],
) -> Result<ReachableSet> {
    if station_value.motion != Motion::Backward {
        return Err(Error::invalid(
            "station value functions must measure time from the launch set",
        ));
    }
    if filter == AngleFilter::Perpendicular {
        if mean_tracks.is_empty() {
            return Err(Error::invalid("perpendicular filter needs at least one mean trajectory"));
        }
        if mean_tracks
            .iter()
            .any(|m| m.points.len() != grid.n_slices() || m.headings.len() != grid.n_slices())
        {
            return Err(Error::GridMismatch("mean tracks do not match the time slices".into()));
        }
    }

    let cells = grid.cells();
    let n = grid.len();
    let mut mask = vec![false; n];
    let mut contact_heading = vec![f64::NAN; n];
    let mut arrival_time = vec![f64::INFINITY; n];

    match filter {
        AngleFilter::Free => {
            for cell in 0..cells {
                let p = grid.position(cell);
                let (u, th) = station_value.min_over_heading(p)?;
                for (s, &t) in grid.times.iter().enumerate() {
                    let idx = s * cells + cell;
                    arrival_time[idx] = u;
                    if u <= t {
                        mask[idx] = true;
                        contact_heading[idx] = th;
                    }
                }
            }
        }
        AngleFilter::Perpendicular => {
            for (s, &t) in grid.times.iter().enumerate() {
                for cell in 0..cells {
                    let p = grid.position(cell);
                    let psi = nearest_heading(mean_tracks, s, p);
                    let mut best = (f64::INFINITY, f64::NAN);
                    for th in [psi + FRAC_PI_2, psi - FRAC_PI_2] {
                        let u = station_value.eval(&State::new(p[0], p[1], th))?;
                        if u < best.0 {
                            best = (u, super::wrap_angle(th));
                        }
                    }
                    let idx = s * cells + cell;
                    arrival_time[idx] = best.0;
                    if best.0 <= t {
                        mask[idx] = true;
                        contact_heading[idx] = best.1;
                    }
                }
            }
        }
    }

    Ok(ReachableSet {
        station,
        filter,
        grid: grid.clone(),
        mask,
        contact_heading,
        arrival_time,
    })
}

fn nearest_heading(tracks: &[MeanTrack], slice: usize, p: [f64; 2]) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    for tr in tracks {
        let q = tr.points[slice];
        let d = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
        if d < best.0 {
            best = (d, tr.headings[slice]);
        }
    }
    best.1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PursuerPath {
    pub launch_time: f64,
    pub path: Vec<PathSample>,
}

/// Launch time and forward path for a pursuer that must occupy `(x, heading)`
/// at time `t`. The path is integrated backwards from the rendezvous state
/// down the station value function and then reversed.
pub fn pursuer_path(
    station_value: &ValueFunction,
    t: f64,
    x: [f64; 2],
    heading: f64,
    dt: f64,
) -> Result<PursuerPath> {
    if station_value.motion != Motion::Backward {
        return Err(Error::invalid(
            "station value functions must measure time from the launch set",
        ));
    }
    let rendezvous = State::new(x[0], x[1], heading);
    let u = station_value.eval(&rendezvous)?;
    if !u.is_finite() || t - u < 0.0 {
        return Err(Error::Infeasible(format!(
            "rendezvous at t={t:.4} needs {u:.4} time units from the station"
        )));
    }
    let reverse = extract_trajectory(station_value, &rendezvous, dt)?;
    let path = reverse
        .iter()
        .rev()
        .map(|p| PathSample {
            t: t - p.t,
            state: p.state,
        })
        .collect();
    Ok(PursuerPath {
        launch_time: t - u,
        path,
    })
}
