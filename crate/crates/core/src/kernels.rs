//! Squared-exponential kernel, its time derivatives, and the Gram block
//! matrices used by the constrained MAP fit and the GP correction step.
//!
//! The kernel is parameterised as `k(t, t') = s * exp(-(t - t')^2 / (4 l^2))`
//! with lengthscale `l` and output scale `s`. Derivative blocks follow the
//! convention that `d1` differentiates the first argument and `d2` the second.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default nugget added to Gram diagonals before factorization.
pub const DEFAULT_NUGGET: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelForm {
    #[default]
    SquaredExponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub lengthscale: f64,
    pub output_scale: f64,
    #[serde(default)]
    pub form: KernelForm,
}

/// First and mixed derivatives of the kernel at a pair of times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelDerivs {
    /// `∂k/∂t`
    pub d1: f64,
    /// `∂k/∂t'`
    pub d2: f64,
    /// `∂²k/∂t∂t'`
    pub d12: f64,
}

impl KernelSpec {
    pub fn new(lengthscale: f64, output_scale: f64) -> Result<Self> {
        let spec = Self {
            lengthscale,
            output_scale,
            form: KernelForm::SquaredExponential,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscale > 0.0 && self.lengthscale.is_finite()) {
            return Err(Error::invalid(format!(
                "kernel lengthscale must be positive, got {}",
                self.lengthscale
            )));
        }
        if !(self.output_scale > 0.0 && self.output_scale.is_finite()) {
            return Err(Error::invalid(format!(
                "kernel output scale must be positive, got {}",
                self.output_scale
            )));
        }
        Ok(())
    }

    #[inline]
    fn inv_4l2(&self) -> f64 {
        0.25 / (self.lengthscale * self.lengthscale)
    }

    #[inline]
    pub fn eval(&self, t: f64, t2: f64) -> f64 {
        let r = t - t2;
        self.output_scale * (-self.inv_4l2() * r * r).exp()
    }

    #[inline]
    pub fn derivs(&self, t: f64, t2: f64) -> KernelDerivs {
        let c = self.inv_4l2();
        let r = t - t2;
        let k = self.output_scale * (-c * r * r).exp();
        let d1 = -2.0 * c * r * k;
        KernelDerivs {
            d1,
            d2: -d1,
            d12: 2.0 * c * k * (1.0 - 2.0 * c * r * r),
        }
    }

    /// `k(0, 0) / (∂∂'k)(0, 0)`, the scaling applied to the derivative nugget.
    pub fn derivative_nugget_scale(&self) -> f64 {
        2.0 * self.lengthscale * self.lengthscale
    }
}

pub fn eval_kernel(spec: &KernelSpec, t: f64, t2: f64) -> f64 {
    spec.eval(t, t2)
}

pub fn eval_kernel_derivs(spec: &KernelSpec, t: f64, t2: f64) -> KernelDerivs {
    spec.derivs(t, t2)
}

/// Whether the Gram layout carries derivative functionals at the collocation times.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeBlock {
    Included,
    Omitted,
}

/// Gram matrix over value nodes `t = [t_obs; t_colloc]` and, optionally,
/// derivative nodes at `t_colloc`, plus the diagonal nugget perturbation.
#[derive(Debug, Clone)]
pub struct GramBlocks {
    pub theta: DMatrix<f64>,
    pub nugget_diag: DVector<f64>,
    pub obs_times: Vec<f64>,
    pub colloc_times: Vec<f64>,
    pub derivatives: DerivativeBlock,
}

impl GramBlocks {
    pub fn n_values(&self) -> usize {
        self.obs_times.len() + self.colloc_times.len()
    }

    pub fn n_derivs(&self) -> usize {
        match self.derivatives {
            DerivativeBlock::Included => self.colloc_times.len(),
            DerivativeBlock::Omitted => 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.n_values() + self.n_derivs()
    }

    /// `Θ + D^η`.
    pub fn regularized(&self) -> DMatrix<f64> {
        let mut m = self.theta.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += self.nugget_diag[i];
        }
        m
    }

    /// Value times followed by derivative times, in row order.
    pub fn value_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.obs_times.iter().chain(self.colloc_times.iter()).copied()
    }
}

pub fn build_gram(
    obs_times: &[f64],
    colloc_times: &[f64],
    spec: &KernelSpec,
    nugget: f64,
    derivatives: DerivativeBlock,
) -> Result<GramBlocks> {
    if !(nugget >= 0.0) {
        return Err(Error::invalid(format!("nugget must be non-negative, got {nugget}")));
    }
    if derivatives == DerivativeBlock::Included && colloc_times.is_empty() {
        return Err(Error::invalid(
            "ODE constraints requested without collocation times",
        ));
    }
    if obs_times.iter().chain(colloc_times).any(|t| !t.is_finite()) {
        return Err(Error::invalid("node times must be finite"));
    }
    spec.validate()?;

    let values: Vec<f64> = obs_times.iter().chain(colloc_times).copied().collect();
    let nv = values.len();
    let nd = match derivatives {
        DerivativeBlock::Included => colloc_times.len(),
        DerivativeBlock::Omitted => 0,
    };
    let n = nv + nd;
    let mut theta = DMatrix::zeros(n, n);

    for i in 0..nv {
        for j in i..nv {
            let k = spec.eval(values[i], values[j]);
            theta[(i, j)] = k;
            theta[(j, i)] = k;
        }
        for (b, &tc) in colloc_times.iter().enumerate().take(nd) {
            // cov(z(t_i), z'(tc)) = ∂k/∂t'(t_i, tc)
            let d2 = spec.derivs(values[i], tc).d2;
            theta[(i, nv + b)] = d2;
            theta[(nv + b, i)] = d2;
        }
    }
    for a in 0..nd {
        for b in a..nd {
            let d12 = spec.derivs(colloc_times[a], colloc_times[b]).d12;
            theta[(nv + a, nv + b)] = d12;
            theta[(nv + b, nv + a)] = d12;
        }
    }

    let mut nugget_diag = DVector::from_element(n, nugget);
    let dscale = nugget * spec.derivative_nugget_scale();
    for i in nv..n {
        nugget_diag[i] = dscale;
    }

    Ok(GramBlocks {
        theta,
        nugget_diag,
        obs_times: obs_times.to_vec(),
        colloc_times: colloc_times.to_vec(),
        derivatives,
    })
}

/// Covariances between `z(t)` and every functional in the Gram layout.
pub fn cross_covariance(gram: &GramBlocks, spec: &KernelSpec, t: f64) -> DVector<f64> {
    let mut row = DVector::zeros(gram.dim());
    let nv = gram.n_values();
    for (i, tv) in gram.value_times().enumerate() {
        row[i] = spec.eval(t, tv);
    }
    for b in 0..gram.n_derivs() {
        row[nv + b] = spec.derivs(t, gram.colloc_times[b]).d2;
    }
    row
}

/// Covariances between `z'(t)` and every functional in the Gram layout.
pub fn cross_covariance_dt(gram: &GramBlocks, spec: &KernelSpec, t: f64) -> DVector<f64> {
    let mut row = DVector::zeros(gram.dim());
    let nv = gram.n_values();
    for (i, tv) in gram.value_times().enumerate() {
        row[i] = spec.derivs(t, tv).d1;
    }
    for b in 0..gram.n_derivs() {
        row[nv + b] = spec.derivs(t, gram.colloc_times[b]).d12;
    }
    row
}
