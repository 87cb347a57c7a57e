//! Blocked Gibbs sampler with Metropolis–Hastings steps for the shrinkage
//! hyperparameters.

mod chain;
mod conditionals;
mod context;
pub mod geweke;
mod mh;
mod rescale;
mod truncated_gamma;
mod updates;

pub use chain::{
    run_chain, sweep, ChainConfig, ChainDiagnostics, ChainFailure, Draw, PosteriorDraws, SweepStats,
};
pub use conditionals::{
    coef_conditional, coef_var_conditional, delta_conditional, loading_row_conditional, local_conditional,
    noise_conditional, reg_column_conditional, reg_var_conditional, residual_sum_of_squares, score_conditional,
    score_var_conditional, GammaConditional, GaussianConditional,
};
pub use context::SamplerContext;
pub use mh::{ln_target_first, ln_target_rest, mh_step, mh_update_a, StepAdapter, MH_PARAMETERS};
pub use rescale::{apply_rescale, rescale_columns, ridge_target, RidgeTarget};
pub use truncated_gamma::{sample_truncated_gamma, TruncatedDraw, TruncatedGamma};
pub use updates::{update_latent, update_loadings, update_scales};
