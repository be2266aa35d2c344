//! Comparison pursuer: a constant-acceleration Kalman filter tracks the
//! target's position and a proportional-guidance law steers toward the
//! current estimate.

use nalgebra::{Matrix2, Matrix2x6, Matrix6, Vector2, Vector6};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::hjb::{state_at, PathSample, State};
use crate::io::write_csv;
use crate::map_estimator::Observation;

/// Filter state `(x1, x2, v1, v2, a1, a2)` with covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct KfState {
    pub mean: Vector6<f64>,
    pub cov: Matrix6<f64>,
    pub t: f64,
}

impl KfState {
    /// Position from the first fix, zero velocity and acceleration, covariance
    /// `diag(σ², σ², 1, 1, 10, 10)`.
    pub fn from_fix(t: f64, position: [f64; 2], sigma: f64) -> Self {
        let s2 = sigma * sigma;
        Self {
            mean: Vector6::new(position[0], position[1], 0.0, 0.0, 0.0, 0.0),
            cov: Matrix6::from_diagonal(&Vector6::new(s2, s2, 1.0, 1.0, 10.0, 10.0)),
            t,
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.mean[0], self.mean[1]]
    }
}

/// Constant-acceleration transition over `dt`.
pub fn transition(dt: f64) -> Matrix6<f64> {
    let mut f = Matrix6::identity();
    for ax in 0..2 {
        f[(ax, 2 + ax)] = dt;
        f[(ax, 4 + ax)] = 0.5 * dt * dt;
        f[(2 + ax, 4 + ax)] = dt;
    }
    f
}

/// White-jerk process noise with spectral density `q`.
pub fn process_noise(dt: f64, q: f64) -> Matrix6<f64> {
    let (d2, d3, d4, d5) = (dt * dt, dt.powi(3), dt.powi(4), dt.powi(5));
    let block = [
        [d5 / 20.0, d4 / 8.0, d3 / 6.0],
        [d4 / 8.0, d3 / 3.0, d2 / 2.0],
        [d3 / 6.0, d2 / 2.0, dt],
    ];
    let mut m = Matrix6::zeros();
    for ax in 0..2 {
        for a in 0..3 {
            for b in 0..3 {
                m[(2 * a + ax, 2 * b + ax)] = q * block[a][b];
            }
        }
    }
    m
}

pub fn kf_predict(s: &KfState, dt: f64, q: f64) -> Result<KfState> {
    if !(dt >= 0.0) {
        return Err(Error::invalid(format!("prediction step must be non-negative, got {dt}")));
    }
    if dt == 0.0 {
        return Ok(s.clone());
    }
    let f = transition(dt);
    let cov = f * s.cov * f.transpose() + process_noise(dt, q);
    Ok(KfState {
        mean: f * s.mean,
        cov: 0.5 * (cov + cov.transpose()),
        t: s.t + dt,
    })
}

fn observation_matrix() -> Matrix2x6<f64> {
    let mut h = Matrix2x6::zeros();
    h[(0, 0)] = 1.0;
    h[(1, 1)] = 1.0;
    h
}

/// Position fix with isotropic noise `sigma`; Joseph-form covariance.
pub fn kf_update(s: &KfState, z: [f64; 2], sigma: f64) -> Result<KfState> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid("measurement noise must be non-negative"));
    }
    let h = observation_matrix();
    let r = Matrix2::identity() * sigma * sigma;
    let innov_cov = h * s.cov * h.transpose() + r;
    let inv = innov_cov
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Factorization("innovation covariance is singular".into()))?;
    let gain = s.cov * h.transpose() * inv;
    let innov = Vector2::new(z[0], z[1]) - h * s.mean;
    let i_kh = Matrix6::identity() - gain * h;
    let cov = i_kh * s.cov * i_kh.transpose() + gain * r * gain.transpose();
    Ok(KfState {
        mean: s.mean + gain * innov,
        cov: 0.5 * (cov + cov.transpose()),
        t: s.t,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PursuerState {
    pub state: State,
    pub speed: f64,
    pub turning_radius: f64,
    pub gain: f64,
}

impl PursuerState {
    /// Gain `C_p = v_p / (π ρ_p)`.
    pub fn new(state: State, speed: f64, turning_radius: f64) -> Result<Self> {
        if !(speed > 0.0 && turning_radius > 0.0) {
            return Err(Error::invalid("pursuer speed and turning radius must be positive"));
        }
        Ok(Self {
            state,
            speed,
            turning_radius,
            gain: speed / (PI * turning_radius),
        })
    }

    pub fn max_turn_rate(&self) -> f64 {
        self.speed / self.turning_radius
    }

    /// `C_p atan2(Δx2 cos θ - Δx1 sin θ, Δx1 cos θ + Δx2 sin θ)`, saturated.
    pub fn heading_rate(&self, target: [f64; 2]) -> f64 {
        let (dx, dy) = (target[0] - self.state.x1, target[1] - self.state.x2);
        let (c, s) = (self.state.theta.cos(), self.state.theta.sin());
        let bearing = (dy * c - dx * s).atan2(dx * c + dy * s);
        let limit = self.max_turn_rate();
        (self.gain * bearing).clamp(-limit, limit)
    }
}

/// One guidance step: the heading rate is held over `dt` and the position
/// follows the resulting circular arc at constant speed.
pub fn pg_step(p: &PursuerState, target: [f64; 2], dt: f64) -> Result<PursuerState> {
    if !(dt > 0.0) {
        return Err(Error::invalid("guidance step must be positive"));
    }
    let w = p.heading_rate(target);
    let th = p.state.theta;
    let th2 = th + w * dt;
    let (dx, dy) = if (w * dt).abs() < 1e-9 {
        let m = th + 0.5 * w * dt;
        (p.speed * dt * m.cos(), p.speed * dt * m.sin())
    } else {
        let k = p.speed / w;
        (k * (th2.sin() - th.sin()), k * (th.cos() - th2.cos()))
    };
    Ok(PursuerState {
        state: State::new(p.state.x1 + dx, p.state.x2 + dy, th2),
        ..*p
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub dt: f64,
    /// Jerk spectral density.
    pub q: f64,
    pub horizon: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            q: 1.0,
            horizon: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineStep {
    pub t: f64,
    pub pursuer: State,
    pub estimate: [f64; 2],
    pub truth: [f64; 2],
    pub distance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineResult {
    pub steps: Vec<BaselineStep>,
    pub min_distance: f64,
    pub min_distance_time: f64,
}

impl BaselineResult {
    /// `t,pursuer_x1,pursuer_x2,pursuer_theta,est_x1,est_x2,true_x1,true_x2,distance`.
    pub fn write_csv(&self, path: &Path) -> Result<PathBuf> {
        write_csv(
            path,
            &["t", "pursuer_x1", "pursuer_x2", "pursuer_theta", "est_x1", "est_x2", "true_x1", "true_x2", "distance"],
            self.steps.iter().map(|s| {
                [
                    s.t,
                    s.pursuer.x1,
                    s.pursuer.x2,
                    s.pursuer.theta,
                    s.estimate[0],
                    s.estimate[1],
                    s.truth[0],
                    s.truth[1],
                    s.distance,
                ]
            }),
        )
    }
}

/// Closed-loop rollout over `[0, horizon]`: predict every step, fold in each
/// observation once its time is reached, steer toward the estimate. Before the
/// first fix the pursuer holds its heading. Only position channels of the
/// observations are used.
pub fn run_baseline(
    truth: &[PathSample],
    obs: &[Observation],
    pursuer: PursuerState,
    cfg: &BaselineConfig,
) -> Result<BaselineResult> {
    if truth.is_empty() {
        return Err(Error::invalid("empty truth trajectory"));
    }
    if !(cfg.dt > 0.0 && cfg.horizon >= 0.0) {
        return Err(Error::invalid("baseline needs a positive step and non-negative horizon"));
    }
    if let Some(o) = obs.iter().find(|o| o.y.len() < 2) {
        return Err(Error::invalid(format!("observation at t = {} lacks a position", o.t)));
    }
    let n = (cfg.horizon / cfg.dt).round() as usize;
    let mut kf: Option<KfState> = None;
    let mut next_obs = 0;
    let mut p = pursuer;
    let mut steps = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = k as f64 * cfg.dt;
        if let Some(s) = &kf {
            kf = Some(kf_predict(s, t - s.t, cfg.q)?);
        }
        while next_obs < obs.len() && obs[next_obs].t <= t + 1e-12 {
            let o = &obs[next_obs];
            let z = [o.y[0], o.y[1]];
            kf = Some(match &kf {
                None => {
                    let fix = KfState::from_fix(o.t, z, o.sigma[0]);
                    kf_predict(&fix, t - o.t, cfg.q)?
                }
                Some(s) => kf_update(s, z, o.sigma[0])?,
            });
            next_obs += 1;
        }
        let truth_now = state_at(truth, t).expect("non-empty truth").position();
        let estimate = kf.as_ref().map(KfState::position);
        steps.push(BaselineStep {
            t,
            pursuer: p.state,
            estimate: estimate.unwrap_or([f64::NAN; 2]),
            truth: truth_now,
            distance: (p.state.x1 - truth_now[0]).hypot(p.state.x2 - truth_now[1]),
        });
        if k < n {
            p = match estimate {
                Some(e) => pg_step(&p, e, cfg.dt)?,
                None => pg_step(&p, straight_ahead(&p.state), cfg.dt)?,
            };
        }
    }
    let (min_distance, min_distance_time) = steps
        .iter()
        .map(|s| (s.distance, s.t))
        .fold((f64::INFINITY, 0.0), |a, b| if b.0 < a.0 { b } else { a });
    Ok(BaselineResult {
        steps,
        min_distance,
        min_distance_time,
    })
}

fn straight_ahead(s: &State) -> [f64; 2] {
    [s.x1 + s.theta.cos(), s.x2 + s.theta.sin()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use crate::hjb::angle_diff;
    use std::f64::consts::FRAC_PI_2;

    fn random_kf(rng: &mut impl Rng) -> KfState {
        let a = Matrix6::from_fn(|_, _| rng.random_range(-1.0..1.0));
        KfState {
            mean: Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0)),
            cov: a * a.transpose() + Matrix6::identity() * 0.1,
            t: 0.0,
        }
    }

    #[test]
    fn predict_trivial_cases() {
        let s = KfState::from_fix(0.0, [0.3, 0.4], 0.03);
        assert_eq!(kf_predict(&s, 0.0, 1.0).unwrap(), s);
        let p = kf_predict(&s, 0.5, 0.0).unwrap();
        assert_eq!(p.position(), s.position());
        assert!(kf_predict(&s, -0.1, 1.0).is_err());
    }

    #[test]
    fn predict_matches_dense_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let s = random_kf(&mut rng);
            let dt: f64 = rng.random_range(0.0..0.5);
            let q = rng.random_range(0.0..3.0);
            // per-axis 3x3 blocks assembled in (pos, vel, acc) order, then permuted
            let f3 = DMatrix::from_row_slice(3, 3, &[1.0, dt, dt * dt / 2.0, 0.0, 1.0, dt, 0.0, 0.0, 1.0]);
            let q3 = DMatrix::from_fn(3, 3, |a, b| {
                let p = 5 - a - b;
                let denom = [20.0, 8.0, 6.0, 3.0, 2.0, 1.0];
                let idx = match (a.min(b), a.max(b)) {
                    (0, 0) => 0,
                    (0, 1) => 1,
                    (0, 2) => 2,
                    (1, 1) => 3,
                    (1, 2) => 4,
                    _ => 5,
                };
                q * dt.powi(p as i32) / denom[idx]
            });
            let perm = |i: usize| (i % 2, i / 2);
            let big_f = DMatrix::from_fn(6, 6, |i, j| {
                let ((ai, ki), (aj, kj)) = (perm(i), perm(j));
                if ai == aj { f3[(ki, kj)] } else { 0.0 }
            });
            let big_q = DMatrix::from_fn(6, 6, |i, j| {
                let ((ai, ki), (aj, kj)) = (perm(i), perm(j));
                if ai == aj { q3[(ki, kj)] } else { 0.0 }
            });
            let p0 = DMatrix::from_fn(6, 6, |i, j| s.cov[(i, j)]);
            let m0 = DMatrix::from_fn(6, 1, |i, _| s.mean[i]);
            let want_p = &big_f * p0 * big_f.transpose() + big_q;
            let want_m = &big_f * m0;
            let got = kf_predict(&s, dt, q).unwrap();
            for i in 0..6 {
                assert!((got.mean[i] - want_m[(i, 0)]).abs() <= 1e-12);
                for j in 0..6 {
                    assert!((got.cov[(i, j)] - want_p[(i, j)]).abs() <= 1e-12 * want_p[(i, j)].abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn update_matches_dense_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let s = random_kf(&mut rng);
            let z = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let sigma = rng.random_range(0.01..1.0);
            let got = kf_update(&s, z, sigma).unwrap();
            // textbook gain form
            let p = DMatrix::from_fn(6, 6, |i, j| s.cov[(i, j)]);
            let h = DMatrix::from_fn(2, 6, |i, j| if i == j { 1.0 } else { 0.0 });
            let sm = &h * &p * h.transpose() + DMatrix::identity(2, 2) * sigma * sigma;
            let k = &p * h.transpose() * sm.try_inverse().unwrap();
            let innov = DMatrix::from_row_slice(2, 1, &[z[0] - s.mean[0], z[1] - s.mean[1]]);
            let m = DMatrix::from_fn(6, 1, |i, _| s.mean[i]) + &k * innov;
            let pc = (DMatrix::identity(6, 6) - &k * &h) * &p;
            for i in 0..6 {
                assert!((got.mean[i] - m[(i, 0)]).abs() <= 1e-10);
                for j in 0..6 {
                    assert!((got.cov[(i, j)] - pc[(i, j)]).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn update_limits() {
        let mut s = KfState::from_fix(0.0, [0.0, 0.0], 1e3);
        s.cov *= 1e6;
        let u = kf_update(&s, [0.4, -0.2], 0.01).unwrap();
        assert!((u.position()[0] - 0.4).abs() < 1e-8 && (u.position()[1] + 0.2).abs() < 1e-8);
        let s = KfState::from_fix(0.0, [0.1, 0.1], 0.03);
        let u = kf_update(&s, [5.0, 5.0], 1e12).unwrap();
        assert!((u.position()[0] - 0.1).abs() < 1e-12);
        let degenerate = KfState {
            cov: Matrix6::zeros(),
            ..s
        };
        assert!(kf_update(&degenerate, [0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn covariance_stays_psd() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let mut s = KfState::from_fix(0.0, [0.5, 0.5], 0.03);
        for _ in 0..1000 {
            s = kf_predict(&s, rng.random_range(0.0..0.05), rng.random_range(0.0..5.0)).unwrap();
            if rng.random_bool(0.5) {
                s = kf_update(&s, [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)], rng.random_range(1e-3..0.1))
                    .unwrap();
            }
            assert!((s.cov - s.cov.transpose()).amax() <= 1e-12);
            let eig = s.cov.symmetric_eigenvalues();
            assert!(eig.min() >= -1e-9, "{eig}");
        }
    }

    #[test]
    fn guidance_rates() {
        let p = PursuerState::new(State::new(0.0, 0.0, 0.0), 1.0, 0.05).unwrap();
        assert!((p.gain - 1.0 / (0.05 * PI)).abs() < 1e-12);
        assert_eq!(p.heading_rate([1.0, 0.0]), 0.0);
        assert!((p.heading_rate([0.0, 1.0]) - 10.0).abs() < 1e-12);
        let astern = p.heading_rate([-1.0, 1e-12]);
        assert!((astern.abs() - p.gain * PI).abs() < 1e-9);
        let slow = PursuerState::new(State::new(0.0, 0.0, 0.0), 0.3, 0.05).unwrap();
        assert!((slow.heading_rate([0.0, 1.0]) - 0.3 / (0.05 * PI) * FRAC_PI_2).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn guidance_is_saturated(x in -1.0f64..1.0, y in -1.0f64..1.0, th in -4.0f64..4.0, v in 0.1f64..2.0, rho in 0.01f64..0.2) {
            let p = PursuerState::new(State::new(0.0, 0.0, th), v, rho).unwrap();
            prop_assert!(p.heading_rate([x, y]).abs() <= v / rho + 1e-12);
        }

        #[test]
        fn guidance_is_rotation_equivariant(phi in -3.0f64..3.0, tx in 0.0f64..1.0, ty in 0.0f64..1.0) {
            let rot = |x: f64, y: f64| (x * phi.cos() - y * phi.sin(), x * phi.sin() + y * phi.cos());
            let mut a = PursuerState::new(State::new(0.2, 0.3, 0.4), 0.5, 0.05).unwrap();
            let (bx, by) = rot(0.2, 0.3);
            let mut b = PursuerState::new(State::new(bx, by, 0.4 + phi), 0.5, 0.05).unwrap();
            let (rtx, rty) = rot(tx, ty);
            for _ in 0..200 {
                a = pg_step(&a, [tx, ty], 1e-3).unwrap();
                b = pg_step(&b, [rtx, rty], 1e-3).unwrap();
                let (ex, ey) = rot(a.state.x1, a.state.x2);
                prop_assert!((ex - b.state.x1).abs() <= 1e-9 && (ey - b.state.x2).abs() <= 1e-9);
                prop_assert!(angle_diff(a.state.theta + phi, b.state.theta).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn fast_pursuer_catches_a_stationary_target() {
        let truth = vec![PathSample {
            t: 0.0,
            state: State::new(0.7, 0.6, 0.0),
        }];
        let obs: Vec<Observation> = (0..5)
            .map(|k| Observation::new(0.1 * k as f64, vec![0.7, 0.6, 0.0], vec![1e-6; 3]).unwrap())
            .collect();
        let miss = |rho: f64, dt: f64| {
            let p = PursuerState::new(State::new(0.2, 0.2, 0.0), 1.0, rho).unwrap();
            let cfg = BaselineConfig { dt, ..Default::default() };
            run_baseline(&truth, &obs, p, &cfg).unwrap()
        };
        let coarse = miss(0.05, 1e-3).min_distance;
        let r = miss(0.02, 1e-4);
        assert!(r.min_distance < 1e-3 && r.min_distance < coarse / 5.0, "miss {}", r.min_distance);
        let dir = tempfile::tempdir().unwrap();
        let path = r.write_csv(&dir.path().join("baseline.csv")).unwrap();
        assert_eq!(std::fs::read_to_string(path).unwrap().lines().count(), r.steps.len() + 1);
    }
}
