//! Gaussian-process correction of MAP trajectories, parameter posteriors and
//! the gridded mixture belief over target positions.
//!
//! Each position component is an independent GP whose prior mean is the MAP
//! trajectory of one parameter hypothesis. Conditioning on the observed
//! positions gives a posterior mean and variance per time; the marginal
//! likelihood of the observations under each hypothesis drives the Bayesian
//! weights of the Monte Carlo parameter set.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::hjb::PlanGrid;
use crate::io::fmt_f64;
use crate::kernels::KernelSpec;
use crate::map_estimator::{MapTrajectory, Observation, ParamSample};

/// Prior mean of the position GP.
#[derive(Debug, Clone)]
pub enum PriorMean {
    Zero,
    Map(Box<MapTrajectory>),
}

impl PriorMean {
    fn at(&self, t: f64, component: usize) -> f64 {
        match self {
            PriorMean::Zero => 0.0,
            PriorMean::Map(m) => m.eval(t)[component],
        }
    }

    pub fn param(&self) -> Option<ParamSample> {
        match self {
            PriorMean::Zero => None,
            PriorMean::Map(m) => m.param,
        }
    }
}

impl From<MapTrajectory> for PriorMean {
    fn from(m: MapTrajectory) -> Self {
        PriorMean::Map(Box::new(m))
    }
}

#[derive(Debug, Clone)]
struct GpComponent {
    chol: Option<Cholesky<f64, Dyn>>,
    /// `K_σ⁻¹ (y - x*(t_y))`
    alpha: DVector<f64>,
    residual: DVector<f64>,
}

/// Posterior GP over the position components of one hypothesis.
#[derive(Debug, Clone)]
pub struct GpTrajectory {
    pub prior: PriorMean,
    /// `k♯`, one spec per component.
    pub specs: Vec<KernelSpec>,
    pub obs_times: Vec<f64>,
    /// Observation noise standard deviation per component.
    pub sigma: Vec<f64>,
    comps: Vec<GpComponent>,
}

impl GpTrajectory {
    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn param(&self) -> Option<ParamSample> {
        self.prior.param()
    }

    fn cross(&self, i: usize, t: f64) -> DVector<f64> {
        DVector::from_iterator(self.obs_times.len(), self.obs_times.iter().map(|&s| self.specs[i].eval(t, s)))
    }

    pub fn mean(&self, t: f64) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                let m = self.prior.at(t, i);
                if self.obs_times.is_empty() {
                    m
                } else {
                    m + self.cross(i, t).dot(&self.comps[i].alpha)
                }
            })
            .collect()
    }

    /// Posterior variance, with negative round-off clamped to zero.
    pub fn variance(&self, t: f64) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                let prior = self.specs[i].eval(t, t);
                let Some(chol) = &self.comps[i].chol else {
                    return prior;
                };
                let k = self.cross(i, t);
                let v = chol.l().solve_lower_triangular(&k).expect("factor is non-singular");
                let var = prior - v.norm_squared();
                debug_assert!(var >= -1e-10 * prior.max(1e-300), "variance {var}");
                var.max(0.0)
            })
            .collect()
    }

    /// `log f(y | t_y, p)` summed over components.
    pub fn log_marginal_likelihood(&self) -> Result<f64> {
        if self.obs_times.is_empty() {
            return Err(Error::invalid("marginal likelihood needs at least one observation"));
        }
        let n = self.obs_times.len() as f64;
        Ok(self
            .comps
            .iter()
            .map(|c| {
                let chol = c.chol.as_ref().expect("factorized when observations exist");
                let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                -0.5 * (c.residual.dot(&c.alpha) + logdet + n * (2.0 * PI).ln())
            })
            .sum())
    }
}

/// Conditions the GP with prior mean `prior` on the position channels of
/// `obs` (the first `sigma.len()` entries of each observation).
pub fn gp_condition(
    prior: impl Into<PriorMean>,
    obs: &[Observation],
    specs: &[KernelSpec],
    sigma: &[f64],
) -> Result<GpTrajectory> {
    let prior = prior.into();
    let d = sigma.len();
    if specs.len() != d {
        return Err(Error::invalid(format!("need {d} kernel specs, got {}", specs.len())));
    }
    if sigma.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::invalid("observation noise must be non-negative"));
    }
    for spec in specs {
        spec.validate()?;
    }
    if let Some(o) = obs.iter().find(|o| o.y.len() < d || !o.t.is_finite()) {
        return Err(Error::invalid(format!("observation at t = {} has fewer than {d} channels", o.t)));
    }
    let times: Vec<f64> = obs.iter().map(|o| o.t).collect();
    let n = times.len();
    let mut comps = Vec::with_capacity(d);
    for i in 0..d {
        if n == 0 {
            comps.push(GpComponent {
                chol: None,
                alpha: DVector::zeros(0),
                residual: DVector::zeros(0),
            });
            continue;
        }
        let s2 = sigma[i] * sigma[i];
        let k = DMatrix::from_fn(n, n, |a, b| specs[i].eval(times[a], times[b]) + if a == b { s2 } else { 0.0 });
        let chol = k.cholesky().ok_or_else(|| {
            Error::Factorization("observation covariance is singular (duplicate times with zero noise?)".into())
        })?;
        let residual = DVector::from_iterator(n, obs.iter().map(|o| o.y[i] - prior.at(o.t, i)));
        let alpha = chol.solve(&residual);
        comps.push(GpComponent {
            chol: Some(chol),
            alpha,
            residual,
        });
    }
    Ok(GpTrajectory {
        prior,
        specs: specs.to_vec(),
        obs_times: times,
        sigma: sigma.to_vec(),
        comps,
    })
}

/// Log marginal likelihood of the observed positions under the GP with mean
/// `prior`, summed over components.
pub fn log_marginal_likelihood(
    prior: impl Into<PriorMean>,
    obs: &[Observation],
    specs: &[KernelSpec],
    sigma: &[f64],
) -> Result<f64> {
    if obs.is_empty() {
        return Err(Error::invalid("marginal likelihood needs at least one observation"));
    }
    gp_condition(prior, obs, specs, sigma)?.log_marginal_likelihood()
}

/// Normalized posterior weights `w_p ∝ f(y | p) · m_p` where `m_p` is each
/// sample's prior mass, computed in log space.
pub fn param_posterior(samples: &[ParamSample], log_likelihoods: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::invalid("empty parameter set"));
    }
    if samples.len() != log_likelihoods.len() {
        return Err(Error::invalid("one log-likelihood per sample required"));
    }
    if log_likelihoods.iter().any(|l| l.is_nan()) {
        return Err(Error::invalid("log-likelihood is NaN"));
    }
    let logs: Vec<f64> = samples
        .iter()
        .zip(log_likelihoods)
        .map(|(s, &l)| if s.prior_mass > 0.0 { l + s.prior_mass.ln() } else { f64::NEG_INFINITY })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::WeightUnderflow);
    }
    let raw: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Parameter axis for marginal posteriors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamAxis {
    TurningRadius,
    Destination,
}

/// Marginal posterior mass on one axis of a product parameter set, as
/// `(axis value, mass)` sorted by value. Destination values are indices.
pub fn marginal_param_posterior(samples: &[ParamSample], weights: &[f64], axis: ParamAxis) -> Result<Vec<(f64, f64)>> {
    if samples.len() != weights.len() || samples.is_empty() {
        return Err(Error::invalid("one weight per sample required"));
    }
    let rhos: BTreeMap<u64, ()> = samples.iter().map(|s| (s.rho.to_bits(), ())).collect();
    let dests: BTreeMap<usize, ()> = samples.iter().map(|s| (s.dest_index, ())).collect();
    let pairs: BTreeMap<(u64, usize), ()> = samples.iter().map(|s| ((s.rho.to_bits(), s.dest_index), ())).collect();
    if pairs.len() != samples.len() || rhos.len() * dests.len() != samples.len() {
        return Err(Error::invalid("parameter set is not a product grid"));
    }
    let mut acc: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    for (s, &w) in samples.iter().zip(weights) {
        let value = match axis {
            ParamAxis::TurningRadius => s.rho,
            ParamAxis::Destination => s.dest_index as f64,
        };
        // Positive floats order like their bit patterns.
        acc.entry(value.to_bits()).or_insert((value, 0.0)).1 += w;
    }
    let mut out: Vec<(f64, f64)> = acc.into_values().collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

/// Posterior mean of the turning radius.
pub fn posterior_mean_rho(samples: &[ParamSample], weights: &[f64]) -> f64 {
    samples.iter().zip(weights).map(|(s, w)| s.rho * w).sum()
}

/// Turning-radius prior: Gaussian truncated below at `floor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoPrior {
    pub mean: f64,
    pub std: f64,
    pub floor: f64,
}

impl Default for RhoPrior {
    fn default() -> Self {
        Self {
            mean: 0.05,
            std: 0.02,
            floor: 0.01,
        }
    }
}

impl RhoPrior {
    fn normal(&self) -> Result<Normal> {
        Normal::new(self.mean, self.std).map_err(|e| Error::invalid(format!("turning-radius prior: {e}")))
    }

    /// Truncated density.
    pub fn density(&self, rho: f64) -> Result<f64> {
        let n = self.normal()?;
        if rho < self.floor {
            return Ok(0.0);
        }
        Ok(n.pdf(rho) / (1.0 - n.cdf(self.floor)))
    }

    /// Equal-probability quantiles `(k + 1/2)/n`, `k = 0..n`.
    pub fn stratified(&self, n: usize) -> Result<Vec<f64>> {
        let dist = self.normal()?;
        let base = dist.cdf(self.floor);
        Ok((0..n)
            .map(|k| dist.inverse_cdf(base + (1.0 - base) * (k as f64 + 0.5) / n as f64))
            .collect())
    }
}

/// Product Monte Carlo set: `n_rho` stratified turning radii times every
/// destination (uniform prior), each with mass `1/(n_rho · n_dest)`.
pub fn stratified_param_set(prior: &RhoPrior, n_rho: usize, n_dest: usize) -> Result<Vec<ParamSample>> {
    if n_rho == 0 || n_dest == 0 {
        return Err(Error::invalid("need at least one radius and one destination"));
    }
    let mass = 1.0 / (n_rho * n_dest) as f64;
    let mut out = Vec::with_capacity(n_rho * n_dest);
    for rho in prior.stratified(n_rho)? {
        let dens = prior.density(rho)? / n_dest as f64;
        for dest in 0..n_dest {
            out.push(ParamSample::new(rho, dest, dens, mass)?);
        }
    }
    Ok(out)
}

/// Mixture over parameter hypotheses of gridded position densities.
#[derive(Debug, Clone)]
pub struct Belief {
    pub grid: PlanGrid,
    pub samples: Vec<ParamSample>,
    pub weights: Vec<f64>,
    /// Per hypothesis, slice-major `f(x | t, p)` at the grid nodes.
    densities: Vec<Vec<f64>>,
}

impl Belief {
    /// Evaluates each hypothesis' independent Gaussian position density on the
    /// grid and normalizes every slice. Variances are floored at `(h/1000)²`.
    pub fn from_gp(grid: PlanGrid, gps: &[GpTrajectory], weights: &[f64]) -> Result<Self> {
        if gps.is_empty() || gps.len() != weights.len() {
            return Err(Error::invalid("one weight per hypothesis required"));
        }
        if gps.iter().any(|g| g.dim() != 2) {
            return Err(Error::invalid("belief needs two position components"));
        }
        let samples = gps
            .iter()
            .map(|g| g.param().ok_or_else(|| Error::invalid("GP prior carries no parameter sample")))
            .collect::<Result<Vec<_>>>()?;
        let floor = (1e-3 * grid.h1().min(grid.h2())).powi(2);
        let densities = gps
            .par_iter()
            .map(|g| {
                let mut out = vec![0.0; grid.len()];
                for (k, &t) in grid.times.iter().enumerate() {
                    let m = g.mean(t);
                    let v = g.variance(t);
                    let (v1, v2) = (v[0].max(floor), v[1].max(floor));
                    let slice = &mut out[k * grid.cells()..(k + 1) * grid.cells()];
                    for (c, f) in slice.iter_mut().enumerate() {
                        let x = grid.position(c);
                        *f = -0.5 * ((x[0] - m[0]).powi(2) / v1 + (x[1] - m[1]).powi(2) / v2);
                    }
                    exp_normalize(slice, grid.cell_area());
                }
                out
            })
            .collect();
        Self::from_densities(grid, samples, weights.to_vec(), densities)
    }

    /// Wraps precomputed densities; weights and slices are renormalized.
    pub fn from_densities(
        grid: PlanGrid,
        samples: Vec<ParamSample>,
        weights: Vec<f64>,
        mut densities: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if samples.len() != weights.len() || samples.len() != densities.len() || samples.is_empty() {
            return Err(Error::invalid("samples, weights and densities must match"));
        }
        if let Some(d) = densities.iter().find(|d| d.len() != grid.len()) {
            return Err(Error::GridMismatch(format!("density has {} values, grid needs {}", d.len(), grid.len())));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("weights must be non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::WeightUnderflow);
        }
        let area = grid.cell_area();
        for d in &mut densities {
            for slice in d.chunks_mut(grid.cells()) {
                let mass: f64 = slice.iter().sum::<f64>() * area;
                if !(mass > 0.0) || slice.iter().any(|f| !(*f >= 0.0)) {
                    return Err(Error::invalid("density slice must be non-negative with positive mass"));
                }
                slice.iter_mut().for_each(|f| *f /= mass);
            }
        }
        Ok(Self {
            weights: weights.iter().map(|w| w / total).collect(),
            grid,
            samples,
            densities,
        })
    }

    pub fn n_hypotheses(&self) -> usize {
        self.samples.len()
    }

    pub fn slice(&self, p: usize, k: usize) -> &[f64] {
        let c = self.grid.cells();
        &self.densities[p][k * c..(k + 1) * c]
    }

    pub(crate) fn slice_mut(&mut self, p: usize, k: usize) -> &mut [f64] {
        let c = self.grid.cells();
        &mut self.densities[p][k * c..(k + 1) * c]
    }

    /// `Σ_p w_p f(x | t_k, p)` over the whole slice.
    pub fn mixture_slice(&self, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.cells()];
        for (p, &w) in self.weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, f) in out.iter_mut().zip(self.slice(p, k)) {
                *o += w * f;
            }
        }
        out
    }

    /// `(|Σ w - 1|, max over hypotheses and slices of |∫ f - 1|)`.
    pub fn normalization_errors(&self) -> (f64, f64) {
        let werr = (self.weights.iter().sum::<f64>() - 1.0).abs();
        let area = self.grid.cell_area();
        let mut serr: f64 = 0.0;
        for p in 0..self.n_hypotheses() {
            for k in 0..self.grid.n_slices() {
                serr = serr.max((self.slice(p, k).iter().sum::<f64>() * area - 1.0).abs());
            }
        }
        (werr, serr)
    }

    /// Writes `x1,x2,f` for the mixture at slice `k`.
    pub fn write_density_csv(&self, k: usize, path: &Path) -> Result<PathBuf> {
        let mix = self.mixture_slice(k);
        let rows = mix.iter().enumerate().map(|(c, &f)| {
            let x = self.grid.position(c);
            [x[0], x[1], f]
        });
        crate::io::write_csv(path, &["x1", "x2", "f"], rows)
    }

    /// Writes the weight table keyed by `(rho, dest_index)`.
    pub fn write_weight_table(&self, path: &Path) -> Result<PathBuf> {
        write_weight_table(&self.samples, &self.weights, path)
    }
}

/// `rho,dest_index,prior_mass,weight` rows.
pub fn write_weight_table(samples: &[ParamSample], weights: &[f64], path: &Path) -> Result<PathBuf> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "rho,dest_index,prior_mass,weight")?;
    for (s, w) in samples.iter().zip(weights) {
        writeln!(f, "{},{},{},{}", fmt_f64(s.rho), s.dest_index, fmt_f64(s.prior_mass), fmt_f64(*w))?;
    }
    f.flush()?;
    Ok(path.to_path_buf())
}

/// Exponentiates log-densities after subtracting their maximum and scales the
/// slice to unit mass.
fn exp_normalize(slice: &mut [f64], area: f64) {
    let max = slice.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for f in slice.iter_mut() {
        *f = (*f - max).exp();
        total += *f;
    }
    let scale = 1.0 / (total * area);
    slice.iter_mut().for_each(|f| *f *= scale);
}

/// Mixture density at `(t, x)`: bilinear in space, linear between slices.
pub fn mixture_density(belief: &Belief, t: f64, x: [f64; 2]) -> Result<f64> {
    let g = &belief.grid;
    let (first, last) = (g.times[0], g.times[g.n_slices() - 1]);
    if !(t >= first - 1e-9 && t <= last + 1e-9) {
        return Err(Error::invalid(format!("time {t} outside the belief horizon [{first}, {last}]")));
    }
    if x[0] < g.lo[0] || x[0] > g.hi[0] || x[1] < g.lo[1] || x[1] > g.hi[1] {
        return Ok(0.0);
    }
    let (k0, k1, wt) = match g.slice_at(t) {
        Some(k) => (k, k, 0.0),
        None => {
            let k1 = g.times.partition_point(|&s| s < t).clamp(1, g.n_slices() - 1);
            let k0 = k1 - 1;
            (k0, k1, (t - g.times[k0]) / (g.times[k1] - g.times[k0]))
        }
    };
    let bilinear = |k: usize| {
        let mix = |c: usize| -> f64 { belief.weights.iter().enumerate().map(|(p, w)| w * belief.slice(p, k)[c]).sum() };
        let q1 = ((x[0] - g.lo[0]) / g.h1()).clamp(0.0, (g.n1 - 1) as f64);
        let q2 = ((x[1] - g.lo[1]) / g.h2()).clamp(0.0, (g.n2 - 1) as f64);
        let (i, j) = ((q1 as usize).min(g.n1 - 2), (q2 as usize).min(g.n2 - 2));
        let (a, b) = (q1 - i as f64, q2 - j as f64);
        (1.0 - a) * (1.0 - b) * mix(g.cell(i, j))
            + a * (1.0 - b) * mix(g.cell(i + 1, j))
            + (1.0 - a) * b * mix(g.cell(i, j + 1))
            + a * b * mix(g.cell(i + 1, j + 1))
    };
    let f0 = bilinear(k0);
    Ok(if k1 == k0 { f0 } else { (1.0 - wt) * f0 + wt * bilinear(k1) })
}
