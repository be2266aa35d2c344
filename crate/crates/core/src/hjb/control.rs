use serde::{Deserialize, Serialize};

use super::{State, ValueFunction};
use crate::error::{Error, Result};

/// One sample of an extracted path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub t: f64,
    pub state: State,
}

/// Bang-bang heading control `α = -sgn(∂u/∂θ)` for the value function's own
/// motion sense. Near-zero slopes are resolved by comparing `u` one grid step
/// ahead under each turn direction, defaulting to `+1`.
pub fn optimal_heading_rate(vf: &ValueFunction, s: &State) -> Result<f64> {
    let u = vf.eval(s)?;
    if !u.is_finite() {
        return Err(Error::Unreachable);
    }
    let slope = vf.d_theta(s)?;
    let tie = 1e-6 * vf.turning_radius / vf.speed;
    if slope.is_finite() && slope.abs() > tie {
        return Ok(-slope.signum());
    }
    let dt = (vf.grid.cell_width() / vf.speed).min(vf.grid.h_theta() * vf.turning_radius / vf.speed);
    let ahead = |alpha: f64| {
        let next = heun_step(s, alpha, vf.motion.sign() * vf.speed, vf.turning_radius, dt);
        vf.eval_clamped(next.x1, next.x2, next.theta)
    };
    let (left, right) = (ahead(1.0), ahead(-1.0));
    if right < left - 1e-15 {
        Ok(-1.0)
    } else {
        Ok(1.0)
    }
}

/// Heun step of the Dubins dynamics with the heading control held over the step.
/// `signed_speed` is negative when integrating the time-reversed car.
pub(crate) fn heun_step(s: &State, alpha: f64, signed_speed: f64, radius: f64, dt: f64) -> State {
    let rate = alpha * signed_speed.abs() / radius;
    let f = |th: f64| (signed_speed * th.cos(), signed_speed * th.sin());
    let (a1, b1) = f(s.theta);
    let th_pred = s.theta + dt * rate;
    let (a2, b2) = f(th_pred);
    State::new(
        s.x1 + 0.5 * dt * (a1 + a2),
        s.x2 + 0.5 * dt * (b1 + b2),
        s.theta + dt * rate,
    )
}

/// Roll the closed loop forward (in the value function's motion sense) from
/// `start` until the target set is entered. The budget is `1.5 u(start)`.
pub fn extract_trajectory(vf: &ValueFunction, start: &State, dt: f64) -> Result<Vec<PathSample>> {
    if !(dt > 0.0) {
        return Err(Error::invalid("time step must be positive"));
    }
    let u0 = vf.eval(start)?;
    if !u0.is_finite() {
        return Err(Error::Unreachable);
    }
    let tol = vf.heading_tolerance();
    let mut path = vec![PathSample { t: 0.0, state: *start }];
    if vf.target.contains(start, tol) {
        return Ok(path);
    }
    let budget = 1.5 * u0 + 2.0 * dt;
    let signed_speed = vf.motion.sign() * vf.speed;
    let mut s = *start;
    let mut t = 0.0;
    while t < budget {
        let alpha = optimal_heading_rate(vf, &s).or_else(|e| match e {
            // Leaving the reached region mid-rollout: keep the last control.
            Error::Unreachable => Ok(0.0),
            other => Err(other),
        })?;
        let next = heun_step(&s, alpha, signed_speed, vf.turning_radius, dt);
        if !vf.grid.contains_position(next.position()) {
            return Err(Error::ExtractionFailed { budget });
        }
        // Stop at the boundary crossing instead of overshooting into the set.
        if vf.target.contains(&next, tol) {
            let frac = crossing_fraction(vf, &s, &next);
            let last = interpolate(&s, &next, frac);
            path.push(PathSample {
                t: t + frac * dt,
                state: last,
            });
            return Ok(path);
        }
        t += dt;
        s = next;
        path.push(PathSample { t, state: s });
    }
    Err(Error::ExtractionFailed { budget })
}

/// State on a time-stamped path at time `t`, linear between samples (angles
/// along the shorter arc) and held constant outside the sampled span.
pub fn state_at(path: &[PathSample], t: f64) -> Option<State> {
    let first = path.first()?;
    let last = path.last()?;
    if t <= first.t {
        return Some(first.state);
    }
    if t >= last.t {
        return Some(last.state);
    }
    let k = path.partition_point(|p| p.t <= t).max(1);
    let (a, b) = (&path[k - 1], &path[k]);
    let span = b.t - a.t;
    let f = if span > 0.0 { (t - a.t) / span } else { 0.0 };
    Some(interpolate(&a.state, &b.state, f))
}

fn interpolate(a: &State, b: &State, f: f64) -> State {
    State::new(
        a.x1 + f * (b.x1 - a.x1),
        a.x2 + f * (b.x2 - a.x2),
        a.theta + f * super::angle_diff(b.theta, a.theta),
    )
}

fn crossing_fraction(vf: &ValueFunction, a: &State, b: &State) -> f64 {
    let tol = vf.heading_tolerance();
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if vf.target.contains(&interpolate(a, b, mid), tol) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}
