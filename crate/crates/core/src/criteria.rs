//! Deviance information criterion and two Bayesian information criteria for
//! choosing basis dimensions.
//!
//! The likelihood depends on a state only through `Θ_i` and `φ²`, so the
//! plug-in deviance uses their posterior means.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::model::{log_likelihood, subject_log_likelihood, FunctionalDataset, ModelDims};
use crate::sampler::PosteriorDraws;
use crate::splines::BasisMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaReport {
    pub dic: f64,
    pub bic1: f64,
    pub bic2: f64,
    /// Effective number of parameters, `mean D − D(plug-in)`.
    pub p_dic: f64,
    pub mean_deviance: f64,
    pub plugin_deviance: f64,
    /// Entries of `Λ`, `Γ`, `β`, `Σ`, `H` and `φ²`.
    pub n_fixed: usize,
    /// `n_fixed` plus every subject's `Θ_i` and `η_i` coordinates.
    pub n_total: usize,
    /// Observed cells.
    pub n_obs: usize,
    pub n_subjects: usize,
}

/// Fixed-effect parameter count.
pub fn fixed_parameter_count(d: &ModelDims) -> usize {
    d.p1 * d.q1 + d.p2 * d.q2 + d.d * d.q1 * d.q2 + d.p1 * d.p2 + d.q1 * d.q2 + 1
}

/// Fixed plus latent coordinate count.
pub fn total_parameter_count(d: &ModelDims) -> usize {
    fixed_parameter_count(d) + d.n * (d.p1 * d.p2 + d.q1 * d.q2)
}

/// DIC, BIC1 (penalty `log n`) and BIC2 (penalty `log N_obs`) from draws.
pub fn compute_criteria(
    draws: &PosteriorDraws,
    data: &FunctionalDataset,
    b1: &BasisMatrix,
    b2: &BasisMatrix,
) -> Result<CriteriaReport> {
    if draws.is_empty() {
        return arg_err("no posterior draws");
    }
    if draws.dims.n != data.n_subjects() {
        return arg_err("draws and dataset disagree on the number of subjects");
    }
    let deviances: Vec<f64> = draws
        .draws
        .par_iter()
        .map(|d| log_likelihood(&d.state, data, b1, b2).map(|ll| -2.0 * ll))
        .collect::<Result<_>>()?;
    let n_draws = draws.len() as f64;
    let mean_deviance = deviances.iter().sum::<f64>() / n_draws;

    let (p1, p2) = (draws.dims.p1, draws.dims.p2);
    let mut mean_coefs = vec![DMatrix::<f64>::zeros(p1, p2); data.n_subjects()];
    let mut mean_noise = 0.0;
    for d in &draws.draws {
        for (acc, c) in mean_coefs.iter_mut().zip(&d.state.coefs) {
            *acc += c;
        }
        mean_noise += d.state.noise_var;
    }
    mean_noise /= n_draws;
    let mut plugin_ll = 0.0;
    for (c, subj) in mean_coefs.iter_mut().zip(&data.subjects) {
        *c /= n_draws;
        plugin_ll += subject_log_likelihood(c, mean_noise, subj, b1, b2)?;
    }
    let plugin_deviance = -2.0 * plugin_ll;
    let p_dic = mean_deviance - plugin_deviance;

    let n_fixed = fixed_parameter_count(&draws.dims);
    let n_total = total_parameter_count(&draws.dims);
    let n_obs = data.n_observed();
    let n_subjects = data.n_subjects();
    if n_subjects == 0 || n_obs == 0 {
        return arg_err("criteria need at least one subject and one observed cell");
    }
    Ok(CriteriaReport {
        dic: mean_deviance + p_dic,
        bic1: plugin_deviance + n_fixed as f64 * (n_subjects as f64).ln(),
        bic2: plugin_deviance + n_total as f64 * (n_obs as f64).ln(),
        p_dic,
        mean_deviance,
        plugin_deviance,
        n_fixed,
        n_total,
        n_obs,
        n_subjects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts() {
        let d = ModelDims {
            p1: 8,
            p2: 10,
            q1: 6,
            q2: 6,
            d: 1,
            n: 30,
        };
        assert_eq!(fixed_parameter_count(&d), 48 + 60 + 36 + 80 + 36 + 1);
        assert_eq!(total_parameter_count(&d), 261 + 30 * (80 + 36));
    }
}
