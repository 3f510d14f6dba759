//! Estimation of time-varying-parameter regressions and VARs via an
//! integrated rotated Gaussian approximation (IRGA).
//!
//! A full QR rotation of the constant-coefficient design splits the
//! likelihood into a low-dimensional system in the constant coefficients and
//! a high-dimensional system that involves only the nuisance block (the
//! per-period coefficient deviations and, optionally, an SV intercept). The
//! nuisance posterior is approximated once by vector approximate message
//! passing under a spike-and-slab or sparse-Bayesian-learning prior; the
//! constant coefficients are then sampled exactly by Gibbs steps under a
//! Normal-Gamma prior, conditional on that approximation. Stochastic
//! volatility is handled by a log-chi-squared mixture point estimator.
//!
//! The crate also ships the vector-autoregression layer (equation-by-equation
//! estimation, recursive forecasting, impulse responses under a recursive
//! ordering), a forward-filter backward-sample benchmark, and the synthetic
//! experiments comparing the two.

pub mod data;
pub mod error;
pub mod ffbs;
pub mod fit;
pub mod gibbs;
pub mod gig;
pub mod linop;
pub mod parallel;
pub mod priors;
pub mod rotation;
pub mod sim;
pub mod sv;
pub mod vamp;
pub mod var;

pub use error::{Error, Result};
