//! ODE-constrained MAP trajectory recovery.
//!
//! Each state component `z_i` is carried by kernel weights over value nodes at
//! the observation and collocation times and, when the dynamics constrain the
//! fit, derivative nodes at the collocation times. The derivative values are
//! not free: they are set to the right-hand side evaluated at the current
//! collocation values, so the ODE holds by construction. What remains is the
//! unconstrained problem
//!
//! ```text
//! min  Σ_i w_iᵀ (Θ_i + D_i)⁻¹ w_i + Σ_i β_i⁻² Σ_j (y_ij - w_i,y,j)²
//! ```
//!
//! over the observation and collocation values, solved by damped
//! Gauss–Newton on the residual `L_i⁻¹ w_i` with `L_i L_iᵀ = Θ_i + D_i`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::hjb::{Motion, State, ValueFunction};
use crate::kernels::{build_gram, DerivativeBlock, KernelSpec};

/// One noisy reading of every state channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub t: f64,
    pub y: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl Observation {
    pub fn new(t: f64, y: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::invalid(format!("observation time must be finite and non-negative, got {t}")));
        }
        if y.len() != sigma.len() {
            return Err(Error::invalid("observation values and noise levels differ in length"));
        }
        if sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("observation noise must be positive"));
        }
        Ok(Self { t, y, sigma })
    }
}

/// Checks that observations are time-sorted and share one channel count.
pub fn validate_observations(obs: &[Observation], dim: usize) -> Result<()> {
    for w in obs.windows(2) {
        if w[1].t < w[0].t {
            return Err(Error::invalid("observation times must be sorted"));
        }
    }
    if obs.iter().any(|o| o.y.len() != dim) {
        return Err(Error::invalid(format!("observations must carry {dim} channels")));
    }
    Ok(())
}

/// A parameter hypothesis `(ρ, destination)`.
///
/// `prior_density` is `f(p)`; `prior_mass` is the quadrature mass the sample
/// carries in the Monte Carlo set and is what multiplies the likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSample {
    pub rho: f64,
    pub dest_index: usize,
    pub prior_density: f64,
    pub prior_mass: f64,
}

impl ParamSample {
    pub fn new(rho: f64, dest_index: usize, prior_density: f64, prior_mass: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::invalid(format!("turning radius must be positive, got {rho}")));
        }
        if !(prior_mass >= 0.0 && prior_density >= 0.0) {
            return Err(Error::invalid("prior mass and density must be non-negative"));
        }
        Ok(Self {
            rho,
            dest_index,
            prior_density,
            prior_mass,
        })
    }
}

/// Right-hand side of the constraining ODE `ż = Φ(t, z)`.
pub trait Dynamics: Sync {
    fn dim(&self) -> usize;

    /// False for plain regression without derivative nodes.
    fn constrained(&self) -> bool {
        true
    }

    /// Channels holding angles; their observations are unwrapped towards the iterate.
    fn is_angle(&self, _channel: usize) -> bool {
        false
    }

    /// `Φ(t, z)` with discontinuities smoothed at width `eps` (`eps = 0`: exact).
    fn rhs(&self, t: f64, z: &[f64], eps: f64, out: &mut [f64]);

    /// Typical magnitude of the switching function; smoothing widths are multiples of it.
    fn switching_scale(&self) -> f64 {
        1.0
    }

    /// Sup-norm distance between `zdot` and the set-valued right-hand side,
    /// treating switching values within `band` of zero as undecided.
    fn residual(&self, t: f64, z: &[f64], zdot: &[f64], _band: f64) -> f64 {
        let mut f = vec![0.0; self.dim()];
        self.rhs(t, z, 0.0, &mut f);
        f.iter().zip(zdot).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// No ODE at all: the fit reduces to GP regression at the nodes.
#[derive(Debug, Clone, Copy)]
pub struct NoConstraint {
    pub dim: usize,
}

impl Dynamics for NoConstraint {
    fn dim(&self) -> usize {
        self.dim
    }
    fn constrained(&self) -> bool {
        false
    }
    fn rhs(&self, _t: f64, _z: &[f64], _eps: f64, out: &mut [f64]) {
        out.fill(0.0);
    }
    fn residual(&self, _t: f64, _z: &[f64], _zdot: &[f64], _band: f64) -> f64 {
        0.0
    }
}

/// `ż = 0`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroDynamics {
    pub dim: usize,
}

impl Dynamics for ZeroDynamics {
    fn dim(&self) -> usize {
        self.dim
    }
    fn rhs(&self, _t: f64, _z: &[f64], _eps: f64, out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// Dubins car under its own minimum-time feedback:
/// `Φ = (v cos θ, v sin θ, -(v/ρ) sgn(∂u/∂θ))`.
///
/// `∂u/∂θ` is tabulated once by centered differences on the value grid (zero
/// where a neighbour is unreached) and interpolated trilinearly. Inside the
/// destination disk the car parks: speed and turn rate scale linearly with the
/// distance to the disk centre.
#[derive(Debug, Clone)]
pub struct DubinsClosedLoop {
    pub speed: f64,
    pub turning_radius: f64,
    slope: ValueFunction,
    scale: f64,
}

impl DubinsClosedLoop {
    pub fn new(vf: &ValueFunction) -> Result<Self> {
        if vf.motion != Motion::Forward {
            return Err(Error::invalid("closed-loop dynamics need a time-to-target value function"));
        }
        let g = &vf.grid;
        let mut values = vec![0.0; vf.values.len()];
        let inv = 0.5 / g.h_theta();
        for k in 0..g.n_theta {
            let kp = (k + 1) % g.n_theta;
            let km = (k + g.n_theta - 1) % g.n_theta;
            for j in 0..g.n2 {
                for i in 0..g.n1 {
                    let (up, dn) = (vf.node(i, j, kp), vf.node(i, j, km));
                    if up.is_finite() && dn.is_finite() {
                        values[g.index(i, j, k)] = (up - dn) * inv;
                    }
                }
            }
        }
        let mut mags: Vec<f64> = values.iter().map(|v| v.abs()).filter(|v| *v > 0.0).collect();
        let scale = if mags.is_empty() {
            1.0
        } else {
            let mid = mags.len() / 2;
            *mags.select_nth_unstable_by(mid, |a, b| a.total_cmp(b)).1
        };
        Ok(Self {
            speed: vf.speed,
            turning_radius: vf.turning_radius,
            slope: ValueFunction {
                values,
                ..vf.clone()
            },
            scale,
        })
    }

    /// Interpolated `∂u/∂θ`, positions clamped to the grid.
    pub fn slope(&self, x1: f64, x2: f64, theta: f64) -> f64 {
        self.slope.eval_clamped(x1, x2, theta)
    }

    /// Speed factor in `[0, 1]`: one outside the destination, zero at its centre.
    pub fn throttle(&self, x1: f64, x2: f64) -> f64 {
        let disk = &self.slope.target.disk;
        let d = (x1 - disk.center[0]).hypot(x2 - disk.center[1]);
        (d / disk.radius).min(1.0)
    }
}

impl Dynamics for DubinsClosedLoop {
    fn dim(&self) -> usize {
        3
    }

    fn is_angle(&self, channel: usize) -> bool {
        channel == 2
    }

    fn rhs(&self, _t: f64, z: &[f64], eps: f64, out: &mut [f64]) {
        let v = self.speed * self.throttle(z[0], z[1]);
        out[0] = v * z[2].cos();
        out[1] = v * z[2].sin();
        let g = self.slope(z[0], z[1], z[2]);
        let s = if eps > 0.0 {
            (g / eps).tanh()
        } else if g > 0.0 {
            1.0
        } else if g < 0.0 {
            -1.0
        } else {
            0.0
        };
        out[2] = -v / self.turning_radius * s;
    }

    fn switching_scale(&self) -> f64 {
        self.scale
    }

    fn residual(&self, _t: f64, z: &[f64], zdot: &[f64], band: f64) -> f64 {
        let v = self.speed * self.throttle(z[0], z[1]);
        let rate = v / self.turning_radius;
        let r0 = (zdot[0] - v * z[2].cos()).abs();
        let r1 = (zdot[1] - v * z[2].sin()).abs();
        let g = self.slope(z[0], z[1], z[2]);
        let r2 = if g.abs() <= band {
            (zdot[2].abs() - rate).max(0.0)
        } else {
            (zdot[2] + rate * g.signum()).abs()
        };
        r0.max(r1).max(r2)
    }
}

/// Starting point of the Gauss–Newton iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Piecewise-linear interpolation of the observations.
    Interpolate,
    /// Integrate the closed loop from a start state fitted to all observations.
    Rollout,
    /// Rollout, falling back to interpolation if it does not converge.
    #[default]
    Best,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub nugget: f64,
    /// Gradient-norm tolerance, relative to `max(1, objective)`.
    pub tolerance: f64,
    /// Iteration cap per smoothing stage.
    pub max_iterations: usize,
    /// Smoothing widths as multiples of the dynamics' switching scale; the
    /// last entry is the final width.
    pub smoothing_schedule: Vec<f64>,
    pub init: Init,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            nugget: 1e-4,
            tolerance: 1e-6,
            max_iterations: 200,
            smoothing_schedule: vec![1.0, 0.1, 0.01],
            init: Init::Best,
        }
    }
}

/// Uniform collocation grid over `[0, horizon)`.
pub fn uniform_collocation(horizon: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| horizon * i as f64 / n as f64).collect()
}

/// Fitted kernel representation of a MAP trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapTrajectory {
    pub specs: Vec<KernelSpec>,
    pub obs_times: Vec<f64>,
    pub colloc_times: Vec<f64>,
    pub derivatives: bool,
    /// `α_i = (Θ_i + D_i)⁻¹ w_i` per component.
    pub coefficients: Vec<Vec<f64>>,
    /// The optimal node values `w_i`.
    pub nodes: Vec<Vec<f64>>,
    pub param: Option<ParamSample>,
    pub objective: f64,
    /// Objective after every accepted step, across all smoothing stages.
    pub objective_trace: Vec<f64>,
    /// Index into `objective_trace` where each smoothing stage begins.
    pub stage_starts: Vec<usize>,
    pub iterations: usize,
    /// Final absolute smoothing width.
    pub smoothing: f64,
}

impl MapTrajectory {
    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    fn n_values(&self) -> usize {
        self.obs_times.len() + self.colloc_times.len()
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let nv = self.n_values();
        self.coefficients
            .iter()
            .zip(&self.specs)
            .map(|(alpha, spec)| {
                let mut acc = 0.0;
                for (j, tv) in self.obs_times.iter().chain(&self.colloc_times).enumerate() {
                    acc += alpha[j] * spec.eval(t, *tv);
                }
                if self.derivatives {
                    for (b, tc) in self.colloc_times.iter().enumerate() {
                        acc += alpha[nv + b] * spec.derivs(t, *tc).d2;
                    }
                }
                acc
            })
            .collect()
    }

    /// Time derivative of [`MapTrajectory::eval`].
    pub fn eval_dt(&self, t: f64) -> Vec<f64> {
        let nv = self.n_values();
        self.coefficients
            .iter()
            .zip(&self.specs)
            .map(|(alpha, spec)| {
                let mut acc = 0.0;
                for (j, tv) in self.obs_times.iter().chain(&self.colloc_times).enumerate() {
                    acc += alpha[j] * spec.derivs(t, *tv).d1;
                }
                if self.derivatives {
                    for (b, tc) in self.colloc_times.iter().enumerate() {
                        acc += alpha[nv + b] * spec.derivs(t, *tc).d12;
                    }
                }
                acc
            })
            .collect()
    }

    /// Largest ODE residual over the collocation nodes, with switching values
    /// inside ten smoothing widths treated as undecided.
    pub fn constraint_residual(&self, dynamics: &dyn Dynamics) -> f64 {
        if !self.derivatives {
            return 0.0;
        }
        let band = 10.0 * self.smoothing;
        self.colloc_times
            .iter()
            .map(|&t| dynamics.residual(t, &self.eval(t), &self.eval_dt(t), band))
            .fold(0.0, f64::max)
    }
}

/// Evaluates a three-channel (Dubins) MAP trajectory as a state.
pub fn eval_map(traj: &MapTrajectory, t: f64) -> State {
    let z = traj.eval(t);
    State::new(z[0], z[1], z[2])
}

/// Per-component factorized Gram matrix.
struct Component {
    /// `(Θ + D)⁻¹`'s Cholesky factor inverse `L⁻¹`.
    linv: DMatrix<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

struct Problem<'a> {
    obs: &'a [Observation],
    colloc: &'a [f64],
    beta: &'a [f64],
    dynamics: &'a dyn Dynamics,
    comps: Vec<Component>,
    d: usize,
    n_obs: usize,
    n_col: usize,
    deriv: bool,
}

impl Problem<'_> {
    /// Unknowns per component: observation values then collocation values.
    fn nu(&self) -> usize {
        self.n_obs + self.n_col
    }

    fn nw(&self) -> usize {
        self.nu() + if self.deriv { self.n_col } else { 0 }
    }

    fn n_residuals(&self) -> usize {
        self.d * self.nw() + self.d * self.n_obs
    }

    fn colloc_state(&self, x: &DVector<f64>, c: usize) -> Vec<f64> {
        (0..self.d).map(|i| x[i * self.nu() + self.n_obs + c]).collect()
    }

    /// Right-hand side at every collocation node, `phi[c][i]`.
    fn rhs_all(&self, x: &DVector<f64>, eps: f64) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.d]; self.n_col];
        if self.deriv {
            for (c, o) in out.iter_mut().enumerate() {
                self.dynamics.rhs(self.colloc[c], &self.colloc_state(x, c), eps, o);
            }
        }
        out
    }

    fn node_values(&self, x: &DVector<f64>, phi: &[Vec<f64>], i: usize) -> DVector<f64> {
        let nu = self.nu();
        let mut w = DVector::zeros(self.nw());
        w.rows_mut(0, nu).copy_from(&x.rows(i * nu, nu));
        if self.deriv {
            for c in 0..self.n_col {
                w[nu + c] = phi[c][i];
            }
        }
        w
    }

    fn observed(&self, x: &DVector<f64>, i: usize, j: usize) -> f64 {
        let y = self.obs[j].y[i];
        if self.dynamics.is_angle(i) {
            let cur = x[i * self.nu() + j];
            y + TAU * ((cur - y) / TAU).round()
        } else {
            y
        }
    }

    fn residuals(&self, x: &DVector<f64>, eps: f64) -> DVector<f64> {
        let phi = self.rhs_all(x, eps);
        let nw = self.nw();
        let mut r = DVector::zeros(self.n_residuals());
        for i in 0..self.d {
            let w = self.node_values(x, &phi, i);
            r.rows_mut(i * nw, nw).copy_from(&(&self.comps[i].linv * w));
        }
        let base = self.d * nw;
        for i in 0..self.d {
            for j in 0..self.n_obs {
                r[base + i * self.n_obs + j] = (x[i * self.nu() + j] - self.observed(x, i, j)) / self.beta[i];
            }
        }
        r
    }

    fn jacobian(&self, x: &DVector<f64>, eps: f64) -> DMatrix<f64> {
        let (nu, nw, d) = (self.nu(), self.nw(), self.d);
        let mut jac = DMatrix::zeros(self.n_residuals(), d * nu);
        for i in 0..d {
            let linv = &self.comps[i].linv;
            jac.view_mut((i * nw, i * nu), (nw, nu)).copy_from(&linv.columns(0, nu));
        }
        if self.deriv {
            let mut fp = vec![0.0; d];
            let mut fm = vec![0.0; d];
            for c in 0..self.n_col {
                let z = self.colloc_state(x, c);
                for k in 0..d {
                    let h = 1e-7 * z[k].abs().max(1.0);
                    let mut zp = z.clone();
                    let mut zm = z.clone();
                    zp[k] += h;
                    zm[k] -= h;
                    self.dynamics.rhs(self.colloc[c], &zp, eps, &mut fp);
                    self.dynamics.rhs(self.colloc[c], &zm, eps, &mut fm);
                    let col = k * nu + self.n_obs + c;
                    for i in 0..d {
                        let dphi = (fp[i] - fm[i]) / (2.0 * h);
                        if dphi != 0.0 {
                            let linv = &self.comps[i].linv;
                            for r in 0..nw {
                                jac[(i * nw + r, col)] += linv[(r, nu + c)] * dphi;
                            }
                        }
                    }
                }
            }
        }
        let base = d * nw;
        for i in 0..d {
            for j in 0..self.n_obs {
                jac[(base + i * self.n_obs + j, i * nu + j)] = 1.0 / self.beta[i];
            }
        }
        jac
    }

    fn objective(&self, x: &DVector<f64>, eps: f64) -> f64 {
        self.residuals(x, eps).norm_squared()
    }
}

struct Solve {
    x: DVector<f64>,
    objective: f64,
    trace: Vec<f64>,
    stage_starts: Vec<usize>,
    iterations: usize,
    grad_norm: f64,
    converged: bool,
}

/// Damped Gauss–Newton with backtracking. The direction solves the
/// Tikhonov-damped least-squares problem `[J; μ D] δ = -[r; 0]` by QR, which
/// avoids the squared conditioning of the normal equations.
fn gauss_newton(p: &Problem<'_>, x0: DVector<f64>, schedule: &[f64], cfg: &FitConfig) -> Solve {
    let mut x = x0;
    let mut trace = Vec::new();
    let mut stage_starts = Vec::new();
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    let mut converged = false;
    let mut obj = f64::INFINITY;
    let n = x.len();

    for &eps in schedule {
        stage_starts.push(trace.len());
        obj = p.objective(&x, eps);
        trace.push(obj);
        converged = false;
        let mut stalled = 0;
        for _ in 0..cfg.max_iterations {
            let r = p.residuals(&x, eps);
            let jac = p.jacobian(&x, eps);
            let g = jac.tr_mul(&r);
            grad_norm = 2.0 * g.norm();
            if grad_norm <= cfg.tolerance * obj.max(1.0) {
                converged = true;
                break;
            }
            let m = jac.nrows();
            let mut aug = DMatrix::zeros(m + n, n);
            aug.view_mut((0, 0), (m, n)).copy_from(&jac);
            for k in 0..n {
                aug[(m + k, k)] = 1e-6 * jac.column(k).norm().max(1e-12);
            }
            let mut rhs = DVector::zeros(m + n);
            rhs.rows_mut(0, m).copy_from(&(-&r));
            let qr = aug.qr();
            let Some(step) = qr.r().solve_upper_triangular(&qr.q().tr_mul(&rhs)) else {
                break;
            };
            let slope = g.dot(&step);
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let trial = &x + alpha * &step;
                let f = p.objective(&trial, eps);
                if f <= obj + 1e-4 * alpha * 2.0 * slope.min(0.0) && f < obj {
                    accepted = Some((trial, f));
                    break;
                }
                alpha *= 0.5;
            }
            iterations += 1;
            let Some((trial, f)) = accepted else {
                // No decrease along the Gauss–Newton direction: the iterate
                // sits on a kink of the piecewise-smooth dynamics.
                converged = true;
                break;
            };
            let rel = (obj - f) / obj.max(1e-300);
            x = trial;
            obj = f;
            trace.push(obj);
            stalled = if rel < cfg.tolerance { stalled + 1 } else { 0 };
            if stalled >= 3 {
                converged = true;
                break;
            }
        }
    }
    Solve {
        x,
        objective: obj,
        trace,
        stage_starts,
        iterations,
        grad_norm,
        converged,
    }
}

/// Fits the constrained MAP trajectory.
///
/// `specs` and `beta` are per component; `colloc` holds the collocation times
/// (may be empty only for unconstrained dynamics).
pub fn fit_map(
    obs: &[Observation],
    param: Option<ParamSample>,
    specs: &[KernelSpec],
    colloc: &[f64],
    beta: &[f64],
    dynamics: &dyn Dynamics,
    cfg: &FitConfig,
) -> Result<MapTrajectory> {
    let d = dynamics.dim();
    if specs.len() != d || beta.len() != d {
        return Err(Error::invalid(format!("need {d} kernel specs and weights")));
    }
    if beta.iter().any(|b| !(*b > 0.0)) {
        return Err(Error::invalid("data weights must be positive"));
    }
    if cfg.smoothing_schedule.is_empty() {
        return Err(Error::invalid("smoothing schedule is empty"));
    }
    validate_observations(obs, d)?;
    let deriv = dynamics.constrained();
    let obs_times: Vec<f64> = obs.iter().map(|o| o.t).collect();
    let block = if deriv {
        DerivativeBlock::Included
    } else {
        DerivativeBlock::Omitted
    };

    let mut comps = Vec::with_capacity(d);
    for spec in specs {
        let gram = build_gram(&obs_times, colloc, spec, cfg.nugget, block)?;
        let a = gram.regularized();
        let chol = a.clone().cholesky().ok_or_else(|| {
            Error::Factorization("Gram matrix is not positive definite; raise the nugget or remove duplicate nodes".into())
        })?;
        let n = a.nrows();
        let linv = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .ok_or_else(|| Error::Factorization("singular Cholesky factor".into()))?;
        comps.push(Component { linv, chol });
    }

    let problem = Problem {
        obs,
        colloc,
        beta,
        dynamics,
        comps,
        d,
        n_obs: obs.len(),
        n_col: colloc.len(),
        deriv,
    };
    let scale = dynamics.switching_scale();
    let schedule: Vec<f64> = cfg.smoothing_schedule.iter().map(|m| m * scale).collect();

    // A closed-loop rollout fitted to the data already satisfies the sharp
    // dynamics, so it enters at the last smoothing stage. Interpolation runs
    // the full continuation and serves as the fallback.
    let last = schedule.len() - 1;
    let starts: Vec<(Init, usize)> = match cfg.init {
        Init::Best if !obs.is_empty() && deriv => vec![(Init::Rollout, last), (Init::Interpolate, 0)],
        Init::Rollout if !obs.is_empty() && deriv => vec![(Init::Rollout, last)],
        _ => vec![(Init::Interpolate, 0)],
    };
    let mut best: Option<Solve> = None;
    for (init, stage) in starts {
        if best.as_ref().is_some_and(|b| b.converged) {
            break;
        }
        let stages = &schedule[stage..];
        let x0 = initial_guess(&problem, init, stages[0]);
        let s = gauss_newton(&problem, x0, stages, cfg);
        log::debug!("start {init:?}: objective {:.6e} after {} iterations", s.objective, s.iterations);
        if best.as_ref().is_none_or(|b| s.converged || s.objective < b.objective) {
            best = Some(s);
        }
    }
    let s = best.expect("at least one initialisation");
    if !s.converged {
        return Err(Error::NotConverged {
            iterations: s.iterations,
            grad_norm: s.grad_norm,
            objective_trace: s.trace,
        });
    }

    let eps = *schedule.last().expect("non-empty schedule");
    let phi = problem.rhs_all(&s.x, eps);
    let mut coefficients = Vec::with_capacity(d);
    let mut nodes = Vec::with_capacity(d);
    for i in 0..d {
        let w = problem.node_values(&s.x, &phi, i);
        let alpha = problem.comps[i].chol.solve(&w);
        coefficients.push(alpha.as_slice().to_vec());
        nodes.push(w.as_slice().to_vec());
    }
    Ok(MapTrajectory {
        specs: specs.to_vec(),
        obs_times,
        colloc_times: colloc.to_vec(),
        derivatives: deriv,
        coefficients,
        nodes,
        param,
        objective: s.objective,
        objective_trace: s.trace,
        stage_starts: s.stage_starts,
        iterations: s.iterations,
        smoothing: eps,
    })
}

fn initial_guess(p: &Problem<'_>, init: Init, eps: f64) -> DVector<f64> {
    let nu = p.nu();
    let mut x = DVector::zeros(p.d * nu);
    if p.obs.is_empty() {
        return x;
    }
    let times: Vec<f64> = p.obs.iter().map(|o| o.t).chain(p.colloc.iter().copied()).collect();
    let values: Vec<Vec<f64>> = match init {
        Init::Rollout => rollout(p, &shooting_start(p, eps), &times, eps),
        _ => times.iter().map(|&t| interpolate_obs(p, t)).collect(),
    };
    for (m, v) in values.iter().enumerate() {
        for i in 0..p.d {
            x[i * nu + m] = v[i];
        }
    }
    x
}

/// Observations unwrapped along time on angle channels.
fn unwrapped_obs(p: &Problem<'_>) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = p.obs.iter().map(|o| o.y.clone()).collect();
    for i in 0..p.d {
        if !p.dynamics.is_angle(i) {
            continue;
        }
        for j in 1..out.len() {
            let prev = out[j - 1][i];
            let y = out[j][i];
            out[j][i] = y + TAU * ((prev - y) / TAU).round();
        }
    }
    out
}

/// Start state at the first observation time whose closed-loop rollout best
/// matches all observations (weighted least squares, a few damped
/// Gauss–Newton steps from the first observation).
fn shooting_start(p: &Problem<'_>, eps: f64) -> Vec<f64> {
    let ys = unwrapped_obs(p);
    let times: Vec<f64> = p.obs.iter().map(|o| o.t).collect();
    let d = p.d;
    let resid = |z0: &[f64]| -> DVector<f64> {
        let path = rollout(p, z0, &times, eps);
        DVector::from_iterator(
            ys.len() * d,
            path.iter().zip(&ys).flat_map(|(z, y)| (0..d).map(move |i| (z[i] - y[i]) / p.beta[i])),
        )
    };
    let mut z = ys[0].clone();
    let mut r = resid(&z);
    let mut f = r.norm_squared();
    for _ in 0..30 {
        let mut jac = DMatrix::zeros(r.len(), d);
        for i in 0..d {
            let h = 1e-6 * z[i].abs().max(1.0);
            let mut zp = z.clone();
            zp[i] += h;
            jac.set_column(i, &((resid(&zp) - &r) / h));
        }
        let mut h = jac.tr_mul(&jac);
        let damp = 1e-9 * h.trace().max(1e-300);
        for i in 0..d {
            h[(i, i)] += damp;
        }
        let Some(step) = h.cholesky().map(|c| c.solve(&(-jac.tr_mul(&r)))) else {
            break;
        };
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..20 {
            let trial: Vec<f64> = (0..d).map(|i| z[i] + alpha * step[i]).collect();
            let rt = resid(&trial);
            let ft = rt.norm_squared();
            if ft < f {
                improved = (f - ft) > 1e-10 * f;
                z = trial;
                r = rt;
                f = ft;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            break;
        }
    }
    z
}

fn interpolate_obs(p: &Problem<'_>, t: f64) -> Vec<f64> {
    let ys = unwrapped_obs(p);
    let ts: Vec<f64> = p.obs.iter().map(|o| o.t).collect();
    if t <= ts[0] {
        return ys[0].clone();
    }
    if t >= ts[ts.len() - 1] {
        return ys[ys.len() - 1].clone();
    }
    let k = ts.partition_point(|&s| s <= t) - 1;
    let span = ts[k + 1] - ts[k];
    let f = if span > 0.0 { (t - ts[k]) / span } else { 0.0 };
    (0..p.d).map(|i| ys[k][i] + f * (ys[k + 1][i] - ys[k][i])).collect()
}

/// Smoothed closed-loop integration from the first observation, sampled at `times`.
fn rollout(p: &Problem<'_>, z0: &[f64], times: &[f64], eps: f64) -> Vec<Vec<f64>> {
    let t0 = p.obs[0].t;
    let z0 = z0.to_vec();
    let span = times.iter().fold(0.0f64, |m, &t| m.max((t - t0).abs()));
    let n_steps = ((span / 1e-4).ceil() as usize).max(1);
    let dt = span.max(1e-12) / n_steps as f64;
    let d = p.d;
    let integrate = |sign: f64| -> Vec<Vec<f64>> {
        let mut path = vec![z0.clone()];
        let mut z = z0.clone();
        let (mut k1, mut k2) = (vec![0.0; d], vec![0.0; d]);
        for s in 0..n_steps {
            let t = t0 + sign * dt * s as f64;
            p.dynamics.rhs(t, &z, eps, &mut k1);
            let pred: Vec<f64> = (0..d).map(|i| z[i] + sign * dt * k1[i]).collect();
            p.dynamics.rhs(t + sign * dt, &pred, eps, &mut k2);
            for i in 0..d {
                z[i] += sign * 0.5 * dt * (k1[i] + k2[i]);
            }
            path.push(z.clone());
        }
        path
    };
    let fwd = integrate(1.0);
    let bwd = integrate(-1.0);
    times
        .iter()
        .map(|&t| {
            let q = (t - t0) / dt;
            let path = if q >= 0.0 { &fwd } else { &bwd };
            let q = q.abs();
            let k = (q.floor() as usize).min(n_steps - 1);
            let f = (q - k as f64).min(1.0);
            (0..d).map(|i| path[k][i] + f * (path[k + 1][i] - path[k][i])).collect()
        })
        .collect()
}
