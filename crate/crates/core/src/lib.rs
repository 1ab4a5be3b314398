//! Numerical laboratory for an interbank reserve model with default and
//! re-injection: finite particle systems, the mean-field fixed point, the
//! stationary density, blow-up certificates, time-dependent density
//! evolution, and a finite-difference mean-field game solver with an
//! explicit linear-quadratic benchmark.

pub mod blowup;
pub mod cli;
pub mod config;
pub mod error;
pub mod evolution;
pub mod fixed_point;
pub mod lq;
pub mod mfg;
pub mod model;
pub mod output;
pub mod particle;
pub mod quadrature;
pub mod special;
pub mod stationary;
pub mod transport;
pub mod tridiag;

pub use error::{Error, Result};
pub use model::{DensitySnapshot, ModelParams, RateCurve};
