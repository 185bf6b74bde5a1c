//! Empirical likelihood (EL), exponential tilting (ET) and ETEL estimation for moment
//! condition models, with empirical phi-divergence tests, asymptotic power
//! approximations and a deterministic Monte Carlo driver.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod asymptotics;
pub mod distributions;
pub mod divergence;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod optim;
pub mod parallel;
pub mod rng;
pub mod testing;
pub mod tilting;

pub use error::{Error, Result};
