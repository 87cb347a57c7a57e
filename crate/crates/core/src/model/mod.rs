//! Probability model: data containers, prior constants, the latent state, and
//! its log densities.
//!
//! Row loadings (`load_s`, `p1 x q1`) act on the longitudinal `s` basis and
//! column loadings (`load_t`, `p2 x q2`) on the functional `t` basis, so each
//! subject's coefficient matrix is `Θ_i = load_s · scores_i · load_tᵀ + ζ_i`.

mod data;
mod density;
mod hyper;
mod state;

pub use data::{FunctionalDataset, SubjectRecord};
pub use density::{log_likelihood, log_prior, subject_log_likelihood, LogPrior};
pub use hyper::Hyperparameters;
pub use state::{init_state, omega, AxisShrinkage, ModelDims, ModelState};
