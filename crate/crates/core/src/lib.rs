//! Bayesian modeling of multivariate spatial random fields with a
//! nonseparable gamma-mixture cross-covariance.
//!
//! The crate covers covariance evaluation and assembly ([`kernels`]), the
//! Gaussian likelihood ([`model`]), priors ([`priors`]), posterior simulation
//! and the separability test ([`mcmc`]), kriging-style prediction
//! ([`prediction`]), predictive scoring ([`scoring`]), synthetic data
//! ([`simulation`]), and file formats plus command workflows ([`io`],
//! [`config`], [`workflow`]).

// Negated float comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod mcmc;
pub mod model;
pub mod prediction;
pub mod priors;
pub mod scoring;
pub mod simulation;
pub mod workflow;

pub use error::{Error, Result};
