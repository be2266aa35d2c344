//! Greedy rendezvous planning over the gridded belief.
//!
//! Each step picks the reachable grid point `(s, y)` with the lowest
//! probability that the target is farther than `R` from `y` at time `s`, then
//! conditions the belief on that attempt failing.

use log::warn;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gp_posterior::Belief;
use crate::hjb::{union_mask, PlanGrid, ReachableSet, State, ValueFunction};
use crate::io::write_json;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Contact radius `R`.
    pub contact_radius: f64,
    /// Width of the failure suppression kernel; `R/2` when unset.
    pub sigma_r: Option<f64>,
    /// Apply the density update only within `|t - s| <= window`.
    pub temporal_window: Option<f64>,
}

impl PlannerConfig {
    pub fn new(contact_radius: f64) -> Self {
        Self {
            contact_radius,
            sigma_r: None,
            temporal_window: None,
        }
    }

    pub fn sigma_r(&self) -> f64 {
        self.sigma_r.unwrap_or(0.5 * self.contact_radius)
    }

    fn validate(&self) -> Result<()> {
        if !(self.contact_radius > 0.0) {
            return Err(Error::invalid("contact radius must be positive"));
        }
        if self.sigma_r.is_some_and(|s| !(s > 0.0)) {
            return Err(Error::invalid("sigma_r must be positive"));
        }
        if self.temporal_window.is_some_and(|w| !(w >= 0.0)) {
            return Err(Error::invalid("temporal window must be non-negative"));
        }
        Ok(())
    }
}

/// Failure probability per grid point; masked points hold exactly 1.
#[derive(Debug, Clone)]
pub struct FailureField {
    pub grid: PlanGrid,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl FailureField {
    pub fn at(&self, slice: usize, cell: usize) -> f64 {
        self.values[slice * self.grid.cells() + cell]
    }
}

/// Grid offsets `(dj, half-width in i)` of the cells whose centers lie within
/// `radius` of a node.
fn disc_rows(grid: &PlanGrid, radius: f64) -> Vec<(isize, isize)> {
    let (h1, h2) = (grid.h1(), grid.h2());
    let rj = (radius / h2 + 1e-9).floor() as isize;
    (-rj..=rj)
        .map(|dj| {
            let dy = dj as f64 * h2;
            let half = ((radius * radius - dy * dy).max(0.0).sqrt() / h1 + 1e-9).floor() as isize;
            (dj, half)
        })
        .collect()
}

/// Probability mass of `slice` in the disc of `radius` around every node.
fn disc_masses(grid: &PlanGrid, slice: &[f64], rows: &[(isize, isize)]) -> Vec<f64> {
    let (n1, n2) = (grid.n1, grid.n2);
    // prefix[j][i] = Σ_{i' < i} slice[i', j]
    let mut prefix = vec![0.0; (n1 + 1) * n2];
    for j in 0..n2 {
        let mut acc = 0.0;
        for i in 0..n1 {
            acc += slice[grid.cell(i, j)];
            prefix[j * (n1 + 1) + i + 1] = acc;
        }
    }
    let area = grid.cell_area();
    let mut out = vec![0.0; grid.cells()];
    for j in 0..n2 as isize {
        for i in 0..n1 as isize {
            let mut m = 0.0;
            for &(dj, half) in rows {
                let jj = j + dj;
                if jj < 0 || jj >= n2 as isize {
                    continue;
                }
                let lo = (i - half).max(0) as usize;
                let hi = ((i + half).min(n1 as isize - 1) + 1) as usize;
                let row = jj as usize * (n1 + 1);
                m += prefix[row + hi] - prefix[row + lo];
            }
            out[grid.cell(i as usize, j as usize)] = m * area;
        }
    }
    out
}

fn check_radius(grid: &PlanGrid, radius: f64) {
    if radius <= grid.h1().hypot(grid.h2()) {
        warn!(
            "contact radius {radius} does not exceed one cell diagonal; disc masses are quantized"
        );
    }
}

/// `P(t, x) = Σ_p w_p (1 - ∫_{|y - x| ≤ R} f(y | t, p) dy)` on the mask, 1 elsewhere.
pub fn failure_field(belief: &Belief, radius: f64, mask: &[bool]) -> Result<FailureField> {
    let grid = &belief.grid;
    if mask.len() != grid.len() {
        return Err(Error::GridMismatch(format!("mask has {} points, belief grid {}", mask.len(), grid.len())));
    }
    if !(radius > 0.0) {
        return Err(Error::invalid("contact radius must be positive"));
    }
    check_radius(grid, radius);
    let rows = disc_rows(grid, radius);
    let cells = grid.cells();
    let mut values = vec![1.0; grid.len()];
    for k in 0..grid.n_slices() {
        let m = &mask[k * cells..(k + 1) * cells];
        if !m.iter().any(|&b| b) {
            continue;
        }
        let masses = disc_masses(grid, &belief.mixture_slice(k), &rows);
        for (c, &inside) in m.iter().enumerate() {
            if inside {
                values[k * cells + c] = (1.0 - masses[c]).clamp(0.0, 1.0);
            }
        }
    }
    Ok(FailureField {
        grid: grid.clone(),
        values,
        mask: mask.to_vec(),
    })
}

/// Exact argmin over unmasked points as `(slice, cell)`. Ties go to the
/// earliest slice, then the smallest `x1`, then the smallest `x2`.
pub fn select_rendezvous(field: &FailureField) -> Result<(usize, usize)> {
    let g = &field.grid;
    let mut best: Option<(f64, usize, usize)> = None;
    for k in 0..g.n_slices() {
        for i in 0..g.n1 {
            for j in 0..g.n2 {
                let c = g.cell(i, j);
                if !field.mask[k * g.cells() + c] {
                    continue;
                }
                let v = field.at(k, c);
                if best.is_none_or(|(b, _, _)| v < b) {
                    best = Some((v, k, c));
                }
            }
        }
    }
    best.map(|(_, k, c)| (k, c))
        .ok_or_else(|| Error::Infeasible("no reachable grid point".into()))
}

/// `g(x, y) = 1 - exp(-|x - y|² / 2σ²)`.
pub fn suppression(x: [f64; 2], y: [f64; 2], sigma: f64) -> f64 {
    let d2 = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2);
    -(-d2 / (2.0 * sigma * sigma)).exp_m1()
}

/// Conditions `belief` on a failed attempt at grid point `(slice, cell)`.
/// Weights are scaled by each hypothesis' out-of-disc mass at that slice and
/// renormalized; density slices are multiplied by `g(·, y)` and renormalized.
/// The belief is left untouched on error.
pub fn update_on_failure(belief: &mut Belief, slice: usize, cell: usize, cfg: &PlannerConfig) -> Result<()> {
    cfg.validate()?;
    let grid = belief.grid.clone();
    if slice >= grid.n_slices() || cell >= grid.cells() {
        return Err(Error::invalid("rendezvous point outside the belief grid"));
    }
    let y = grid.position(cell);
    let rows = disc_rows(&grid, cfg.contact_radius);
    let weights: Vec<f64> = (0..belief.n_hypotheses())
        .map(|p| {
            let outside = 1.0 - disc_masses_at(&grid, belief.slice(p, slice), &rows, cell);
            // below quadrature round-off the hypothesis counts as captured
            belief.weights[p] * if outside < 1e-12 { 0.0 } else { outside.min(1.0) }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::WeightUnderflow);
    }
    belief.weights = weights.into_iter().map(|w| w / total).collect();

    let sigma = cfg.sigma_r();
    let g: Vec<f64> = (0..grid.cells()).map(|c| suppression(grid.position(c), y, sigma)).collect();
    let area = grid.cell_area();
    let s_time = grid.times[slice];
    for k in 0..grid.n_slices() {
        if cfg.temporal_window.is_some_and(|w| (grid.times[k] - s_time).abs() > w) {
            continue;
        }
        for p in 0..belief.n_hypotheses() {
            let f = belief.slice_mut(p, k);
            let mass: f64 = f.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() * area;
            if !(mass > 0.0) {
                warn!("density slice {k} of hypothesis {p} fully suppressed; left unchanged");
                continue;
            }
            for (v, gi) in f.iter_mut().zip(&g) {
                *v *= gi / mass;
            }
        }
    }
    Ok(())
}

fn disc_masses_at(grid: &PlanGrid, slice: &[f64], rows: &[(isize, isize)], cell: usize) -> f64 {
    let (i, j) = ((cell % grid.n1) as isize, (cell / grid.n1) as isize);
    let mut m = 0.0;
    for &(dj, half) in rows {
        let jj = j + dj;
        if jj < 0 || jj >= grid.n2 as isize {
            continue;
        }
        for ii in (i - half).max(0)..=(i + half).min(grid.n1 as isize - 1) {
            m += slice[grid.cell(ii as usize, jj as usize)];
        }
    }
    m * grid.cell_area()
}

/// Station assignment of one rendezvous point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub station: usize,
    /// `t - u_station(x)`; non-negative.
    pub slack: f64,
    pub launch_time: f64,
}

/// Station with the smallest non-negative slack among `(station, arrival)` pairs.
fn min_slack(t: f64, arrivals: impl IntoIterator<Item = (usize, f64)>) -> Option<Assignment> {
    let mut best: Option<Assignment> = None;
    for (station, u) in arrivals {
        let slack = t - u;
        if !(slack >= 0.0) {
            continue;
        }
        if best.is_none_or(|b| slack < b.slack) {
            best = Some(Assignment {
                station,
                slack,
                launch_time: t - u,
            });
        }
    }
    best
}

/// A point to be served by some station: time, position and, when the
/// contact is angle-constrained, the required arrival heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceRequest {
    pub t: f64,
    pub x: [f64; 2],
    pub heading: Option<f64>,
}

/// Assigns every request to the station minimizing the non-negative slack
/// `t - u_j(x)`. Stations may serve several points.
pub fn assign_pursuers(requests: &[ServiceRequest], stations: &[ValueFunction]) -> Result<Vec<Assignment>> {
    if stations.is_empty() {
        return Err(Error::invalid("no stations"));
    }
    requests
        .iter()
        .map(|r| {
            let arrivals = stations
                .iter()
                .enumerate()
                .map(|(j, vf)| {
                    let u = match r.heading {
                        Some(h) => vf.eval(&State::new(r.x[0], r.x[1], h)),
                        None => vf.min_over_heading(r.x).map(|(u, _)| u),
                    }?;
                    Ok((j, u))
                })
                .collect::<Result<Vec<_>>>()?;
            min_slack(r.t, arrivals).ok_or_else(|| {
                Error::Infeasible(format!("no station reaches ({:.4}, {:.4}) by t = {:.4}", r.x[0], r.x[1], r.t))
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RendezvousPoint {
    pub t: f64,
    pub x: [f64; 2],
    pub contact_radius: f64,
    /// Required arrival heading of the assigned pursuer.
    pub heading: Option<f64>,
    pub station: Option<usize>,
    pub launch_time: Option<f64>,
    pub slack: Option<f64>,
    /// `1 - P(s, y)` under the belief current at selection.
    pub success_probability: f64,
    pub slice: usize,
    pub cell: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanResult {
    pub points: Vec<RendezvousPoint>,
    /// `P[C_k | C_1, …, C_{k-1}]` per step.
    pub conditional_failures: Vec<f64>,
    /// Product of the conditional failures.
    pub overall_failure: f64,
    pub final_weights: Vec<f64>,
    /// Why planning stopped before `attempts` points, if it did.
    pub stop_reason: Option<String>,
    #[serde(skip)]
    pub final_belief: Option<Belief>,
}

impl PlanResult {
    pub fn write_json(&self, path: &Path) -> Result<PathBuf> {
        write_json(path, self)
    }
}

/// Greedy plan of up to `attempts` rendezvous points. `reach` holds one
/// reachable set per station on the belief grid.
pub fn plan(mut belief: Belief, attempts: usize, reach: &[ReachableSet], cfg: &PlannerConfig) -> Result<PlanResult> {
    cfg.validate()?;
    if attempts == 0 {
        return Err(Error::invalid("need at least one attempt"));
    }
    if reach.iter().any(|r| !r.grid.same_layout(&belief.grid)) {
        return Err(Error::GridMismatch("reachable sets and belief use different grids".into()));
    }
    let mask = union_mask(reach)?;
    let cells = belief.grid.cells();
    let mut points = Vec::with_capacity(attempts);
    let mut conditional_failures = Vec::with_capacity(attempts);
    let mut stop_reason = None;
    for step in 0..attempts {
        let field = failure_field(&belief, cfg.contact_radius, &mask)?;
        let (slice, cell) = match select_rendezvous(&field) {
            Ok(p) => p,
            Err(e) if step > 0 => {
                stop_reason = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        let p_fail = field.at(slice, cell);
        let t = belief.grid.times[slice];
        let idx = slice * cells + cell;
        let assignment = min_slack(t, reach.iter().filter(|r| r.mask[idx]).map(|r| (r.station, r.arrival_time[idx])));
        let heading = assignment.and_then(|a| {
            reach
                .iter()
                .find(|r| r.station == a.station)
                .map(|r| r.contact_heading[idx])
                .filter(|h| h.is_finite())
        });
        points.push(RendezvousPoint {
            t,
            x: belief.grid.position(cell),
            contact_radius: cfg.contact_radius,
            heading,
            station: assignment.map(|a| a.station),
            launch_time: assignment.map(|a| a.launch_time),
            slack: assignment.map(|a| a.slack),
            success_probability: 1.0 - p_fail,
            slice,
            cell,
        });
        conditional_failures.push(p_fail);
        if step + 1 < attempts {
            if let Err(e) = update_on_failure(&mut belief, slice, cell, cfg) {
                if matches!(e, Error::WeightUnderflow) {
                    stop_reason = Some("every hypothesis captured; remaining attempts unnecessary".into());
                    break;
                }
                return Err(e);
            }
        }
    }
    Ok(PlanResult {
        overall_failure: conditional_failures.iter().product(),
        points,
        conditional_failures,
        final_weights: belief.weights.clone(),
        stop_reason,
        final_belief: Some(belief),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map_estimator::ParamSample;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn grid(n: usize, k: usize) -> PlanGrid {
        PlanGrid::uniform(n, n, [0.0, 0.0], [1.0, 1.0], 1.0, k).unwrap()
    }

    fn gaussian_slice(g: &PlanGrid, m: [f64; 2], s: f64) -> Vec<f64> {
        (0..g.cells())
            .map(|c| {
                let x = g.position(c);
                (-((x[0] - m[0]).powi(2) + (x[1] - m[1]).powi(2)) / (2.0 * s * s)).exp()
            })
            .collect()
    }

    fn belief(g: &PlanGrid, hyps: &[([f64; 2], f64)], weights: &[f64]) -> Belief {
        let samples = (0..hyps.len()).map(|i| ParamSample::new(0.05, i, 1.0, 1.0).unwrap()).collect();
        let dens = hyps
            .iter()
            .map(|&(m, s)| (0..g.n_slices()).flat_map(|_| gaussian_slice(g, m, s)).collect())
            .collect();
        Belief::from_densities(g.clone(), samples, weights.to_vec(), dens).unwrap()
    }

    #[test]
    fn isotropic_disc_mass_matches_closed_form() {
        let g = grid(401, 1);
        let s = 0.05;
        let r = 0.03;
        let b = belief(&g, &[([0.5, 0.5], s)], &[1.0]);
        let field = failure_field(&b, r, &vec![true; g.len()]).unwrap();
        let centre = g.cell(200, 200);
        let want = (-r * r / (2.0 * s * s)).exp();
        assert!((field.at(0, centre) - want).abs() < 0.02, "{} vs {want}", field.at(0, centre));
    }

    #[test]
    fn huge_radius_captures_everything() {
        let g = grid(21, 2);
        let b = belief(&g, &[([0.3, 0.6], 0.1)], &[1.0]);
        let field = failure_field(&b, 5.0, &vec![true; g.len()]).unwrap();
        assert!(field.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn degenerate_mixture_equals_single_hypothesis() {
        let g = grid(31, 2);
        let one = belief(&g, &[([0.3, 0.6], 0.1)], &[1.0]);
        let two = belief(&g, &[([0.3, 0.6], 0.1), ([0.7, 0.2], 0.05)], &[1.0, 0.0]);
        let m = vec![true; g.len()];
        let a = failure_field(&one, 0.1, &m).unwrap();
        let b = failure_field(&two, 0.1, &m).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn disc_masses_match_direct_sums() {
        let g = grid(23, 1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let slice: Vec<f64> = (0..g.cells()).map(|_| rng.random_range(0.0..1.0)).collect();
        let r = 0.17;
        let rows = disc_rows(&g, r);
        let fast = disc_masses(&g, &slice, &rows);
        for c in 0..g.cells() {
            let x = g.position(c);
            let direct: f64 = (0..g.cells())
                .filter(|&d| {
                    let y = g.position(d);
                    (x[0] - y[0]).hypot(x[1] - y[1]) <= r + 1e-9
                })
                .map(|d| slice[d])
                .sum::<f64>()
                * g.cell_area();
            assert!((fast[c] - direct).abs() < 1e-12);
            assert!((disc_masses_at(&g, &slice, &rows, c) - direct).abs() < 1e-12);
        }
    }

    fn field_from(g: &PlanGrid, values: Vec<f64>, mask: Vec<bool>) -> FailureField {
        FailureField {
            grid: g.clone(),
            values,
            mask,
        }
    }

    #[test]
    fn tie_rule() {
        let g = PlanGrid::uniform(4, 3, [0.0, 0.0], [1.0, 1.0], 1.0, 3).unwrap();
        let uniform = field_from(&g, vec![0.5; g.len()], vec![true; g.len()]);
        assert_eq!(select_rendezvous(&uniform).unwrap(), (0, 0));
        let mut mask = vec![true; g.len()];
        mask[0] = false;
        mask[1] = false; // (i=1, j=0)
        let f = field_from(&g, vec![0.5; g.len()], mask);
        // next in (x1, x2) order after (0,0) is (0,1): cell 4
        assert_eq!(select_rendezvous(&f).unwrap(), (0, 4));
        let mut vals = vec![0.5; g.len()];
        vals[2 * g.cells() + 7] = 0.1;
        let f = field_from(&g, vals, vec![true; g.len()]);
        assert_eq!(select_rendezvous(&f).unwrap(), (2, 7));
        let none = field_from(&g, vec![0.5; g.len()], vec![false; g.len()]);
        assert!(select_rendezvous(&none).unwrap_err().is_infeasible());
    }

    proptest! {
        #[test]
        fn selection_matches_exhaustive_scan(seed in 0u64..1000) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = PlanGrid::uniform(20, 20, [0.0, 0.0], [1.0, 1.0], 1.0, 10).unwrap();
            // coarse values so that ties happen
            let vals: Vec<f64> = (0..g.len()).map(|_| (rng.random_range(0..50) as f64) / 50.0).collect();
            let mask: Vec<bool> = (0..g.len()).map(|_| rng.random_bool(0.7)).collect();
            let f = field_from(&g, vals.clone(), mask.clone());
            let mut keyed: Vec<(u64, usize, usize, usize, usize)> = Vec::new();
            for k in 0..10 {
                for c in 0..g.cells() {
                    if mask[k * g.cells() + c] {
                        keyed.push((vals[k * g.cells() + c].to_bits(), k, c % 20, c / 20, c));
                    }
                }
            }
            keyed.sort();
            let want = keyed.first().map(|e| (e.1, e.4));
            prop_assert_eq!(select_rendezvous(&f).ok(), want);
        }
    }

    #[test]
    fn suppression_limits() {
        assert_eq!(suppression([0.2, 0.2], [0.2, 0.2], 0.015), 0.0);
        assert!(suppression([0.2, 0.2], [0.9, 0.9], 0.015) > 1.0 - 1e-12);
        let r = 0.03;
        assert!((suppression([0.0, 0.0], [r, 0.0], r / 2.0) - (1.0 - (-2.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn certain_capture_zeroes_the_weight() {
        let g = grid(41, 2);
        let mut b = belief(&g, &[([0.5, 0.5], 0.005), ([0.1, 0.1], 0.05)], &[0.5, 0.5]);
        let cfg = PlannerConfig::new(0.05);
        update_on_failure(&mut b, 0, g.cell(20, 20), &cfg).unwrap();
        assert!(b.weights[0] < 1e-12);
        let (we, se) = b.normalization_errors();
        assert!(we <= 1e-9 && se <= 1e-6);
    }

    #[test]
    fn far_away_failure_changes_nothing() {
        let g = grid(61, 2);
        let mut b = belief(&g, &[([0.2, 0.2], 0.02), ([0.3, 0.25], 0.02)], &[0.3, 0.7]);
        let before = b.clone();
        let cfg = PlannerConfig::new(0.03);
        update_on_failure(&mut b, 1, g.cell(58, 58), &cfg).unwrap();
        for p in 0..2 {
            assert!((b.weights[p] - before.weights[p]).abs() <= 1e-9 * before.weights[p]);
            for k in 0..2 {
                for (x, y) in b.slice(p, k).iter().zip(before.slice(p, k)) {
                    assert!((x - y).abs() <= 1e-9 * y.max(1e-300) + 1e-300);
                }
            }
        }
    }

    #[test]
    fn all_captured_is_reported_and_belief_kept() {
        let g = grid(41, 1);
        let mut b = belief(&g, &[([0.5, 0.5], 0.004)], &[1.0]);
        let before = b.weights.clone();
        let err = update_on_failure(&mut b, 0, g.cell(20, 20), &PlannerConfig::new(0.1)).unwrap_err();
        assert!(matches!(err, Error::WeightUnderflow));
        assert_eq!(b.weights, before);
    }

    fn free_reach(g: &PlanGrid, station: usize, arrival: impl Fn([f64; 2]) -> f64) -> ReachableSet {
        let mut mask = vec![false; g.len()];
        let mut at = vec![f64::INFINITY; g.len()];
        let mut heading = vec![f64::NAN; g.len()];
        for (k, &t) in g.times.iter().enumerate() {
            for c in 0..g.cells() {
                let u = arrival(g.position(c));
                let idx = k * g.cells() + c;
                at[idx] = u;
                if u <= t {
                    mask[idx] = true;
                    heading[idx] = 0.0;
                }
            }
        }
        ReachableSet {
            station,
            filter: crate::hjb::AngleFilter::Free,
            grid: g.clone(),
            mask,
            contact_heading: heading,
            arrival_time: at,
        }
    }

    #[test]
    fn second_point_covers_the_other_hypothesis() {
        let g = grid(41, 4);
        let b = belief(&g, &[([0.25, 0.5], 0.02), ([0.75, 0.5], 0.02)], &[0.45, 0.55]);
        let reach = [free_reach(&g, 0, |_| 0.0)];
        let cfg = PlannerConfig::new(0.05);
        let res = plan(b.clone(), 2, &reach, &cfg).unwrap();
        assert_eq!(res.points.len(), 2);
        let p1 = &res.points[0];
        let p2 = &res.points[1];
        assert!((p1.x[0] - 0.75).abs() < 0.03, "first point {:?}", p1.x);
        let rows = disc_rows(&g, cfg.contact_radius);
        let mass = |p: usize, pt: &RendezvousPoint| disc_masses_at(&g, b.slice(p, pt.slice), &rows, pt.cell);
        assert!(mass(0, p2) > mass(1, p2));
        // chain rule bookkeeping
        let prod: f64 = res.conditional_failures.iter().product();
        assert!((prod - res.overall_failure).abs() <= 1e-9);
        assert!(res.overall_failure <= res.conditional_failures[0]);
        let one = plan(b.clone(), 1, &reach, &cfg).unwrap();
        let field = failure_field(&b, cfg.contact_radius, &union_mask(&reach).unwrap()).unwrap();
        let (s, c) = select_rendezvous(&field).unwrap();
        assert_eq!((one.points[0].slice, one.points[0].cell), (s, c));
    }

    #[test]
    fn plan_respects_mask_and_slack() {
        let g = grid(31, 5);
        let b = belief(&g, &[([0.5, 0.5], 0.05)], &[1.0]);
        // station 0 near the left edge, station 1 near the right edge; speed 1
        let reach = [
            free_reach(&g, 0, |x| (x[0] - 0.1f64).hypot(x[1] - 0.5)),
            free_reach(&g, 1, |x| (x[0] - 0.9f64).hypot(x[1] - 0.5)),
        ];
        let res = plan(b, 3, &reach, &PlannerConfig::new(0.05)).unwrap();
        for p in &res.points {
            let idx = p.slice * g.cells() + p.cell;
            let st = p.station.unwrap();
            assert!(reach[st].mask[idx]);
            assert!(p.slack.unwrap() >= 0.0);
            // minimal non-negative slack
            for r in &reach {
                if r.mask[idx] {
                    assert!(p.slack.unwrap() <= p.t - r.arrival_time[idx] + 1e-15);
                }
            }
        }
        let json = serde_json::to_string(&res).unwrap();
        assert!(json.contains("conditional_failures"));
    }

    #[test]
    fn min_slack_prefers_the_tightest_feasible_station() {
        let a = min_slack(1.0, [(0, 0.2), (1, 0.9), (2, 1.1)]).unwrap();
        assert_eq!(a.station, 1);
        assert!((a.launch_time - 0.1).abs() < 1e-15);
        assert!(min_slack(0.1, [(0, 0.2)]).is_none());
    }
}
