//! Probabilistic rendezvous planning for slow pursuers and fast, sparsely
//! observed targets.
//!
//! The pipeline has three layers:
//!
//! * [`hjb`]: minimum-time value functions for the Dubins car, optimal
//!   trajectory extraction, and pursuer reachable sets.
//! * [`map_estimator`] and [`gp_posterior`]: an ODE-constrained kernel MAP fit
//!   per parameter hypothesis, a Gaussian-process correction on top of it, and
//!   the Bayesian mixture over hypotheses.
//! * [`planner`]: greedy selection of rendezvous points that minimizes the
//!   conditional failure probability, with failure-conditioned belief updates.
//!
//! [`baseline`] holds the Kalman filter plus proportional guidance comparison,
//! and [`sim`] ties everything together into reproducible scenarios.

pub mod baseline;
pub mod cli;
pub mod error;
pub mod gp_posterior;
pub mod hjb;
pub mod io;
pub mod kernels;
pub mod map_estimator;
pub mod planner;
pub mod sim;

pub use error::{Error, Result};
