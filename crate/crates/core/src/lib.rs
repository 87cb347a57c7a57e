//! Bayesian inference for longitudinal functional data.
//!
//! Each subject's surface `y_i(s, t)` is represented in a tensor B-spline
//! basis whose coefficient matrix follows a sandwich factor model with
//! multiplicative-gamma shrinkage on both loading matrices. The crate covers
//! basis construction ([`splines`]), the probability model ([`model`]), a
//! blocked Gibbs sampler ([`sampler`]), posterior summaries of mean and
//! covariance ([`posterior`]), information criteria ([`criteria`]) and a
//! simulation harness ([`simgen`]).

pub mod criteria;
pub mod error;
pub mod model;
pub mod posterior;
pub mod random;
pub mod sampler;
pub mod simgen;
pub mod special;
pub mod splines;

pub use error::{Error, Result};

/// Longitudinal (`S`) or functional (`T`) coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Axis {
    S,
    T,
}
