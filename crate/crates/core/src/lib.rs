//! Bayesian detection of an unknown number of change-points in the slope of
//! replicated time series.
//!
//! The mean of every series is a continuous piecewise linear function of
//! time. A fixed-dimension Metropolis–Hastings sampler explores the number
//! and location of its breakpoints under a complexity prior that concentrates
//! the posterior on sparse configurations.

pub mod error;
pub mod io;
pub mod model;
pub mod orchestrate;
pub mod priors;
pub mod run;
pub mod sampler;
pub mod seeds;
pub mod summary;
pub mod synthetic;
pub mod variance;

pub use error::{Error, Result};
