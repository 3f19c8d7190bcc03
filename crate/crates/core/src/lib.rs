//! Stochastic gradient descent on non-convex landscapes under the
//! Łojasiewicz inequality: simulation, explicit bounds and diagnostics.

pub mod analytic_mlp;
pub mod error;
pub mod harness;
pub mod landscape;
pub mod loja_estimator;
pub mod schedule_noise;
pub mod sgd_engine;
pub mod theory_bounds;

pub use error::{Error, Result};
