use nalgebra::DMatrix;

use super::{AxisShrinkage, FunctionalDataset, Hyperparameters, ModelState, SubjectRecord};
use crate::error::{arg_err, Error, Result};
use crate::special::{ln_gamma_pdf, ln_gamma_q, ln_normal_pdf, LN_2PI};
use crate::splines::{eval_surface, BasisMatrix};

/// Log prior density, or a flag when the state leaves the prior support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogPrior {
    Finite(f64),
    OutsideSupport,
}

impl LogPrior {
    pub fn value(self) -> f64 {
        match self {
            LogPrior::Finite(v) => v,
            LogPrior::OutsideSupport => f64::NEG_INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, LogPrior::Finite(_))
    }
}

/// Normal log likelihood of one subject's observed cells given `Θ_i` and `φ²`.
pub fn subject_log_likelihood(
    coefs: &DMatrix<f64>,
    noise_var: f64,
    subject: &SubjectRecord,
    b1: &BasisMatrix,
    b2: &BasisMatrix,
) -> Result<f64> {
    if !(noise_var > 0.0) {
        return Err(Error::State(format!("residual variance {noise_var} is not positive")));
    }
    let fitted = eval_surface(coefs, b1, b2)?;
    if fitted.shape() != subject.y.shape() {
        return arg_err("bases are not evaluated on the subject's grid");
    }
    let mut ssr = 0.0;
    let mut n = 0usize;
    for ((y, f), &m) in subject.y.iter().zip(fitted.iter()).zip(subject.mask.iter()) {
        if m {
            ssr += (y - f) * (y - f);
            n += 1;
        }
    }
    Ok(-0.5 * (n as f64 * (LN_2PI + noise_var.ln()) + ssr / noise_var))
}

/// Sum of observed-cell log densities across subjects; masked cells contribute nothing.
pub fn log_likelihood(state: &ModelState, data: &FunctionalDataset, b1: &BasisMatrix, b2: &BasisMatrix) -> Result<f64> {
    if state.coefs.len() != data.n_subjects() {
        return arg_err("state and dataset disagree on the number of subjects");
    }
    let mut total = 0.0;
    for (theta, subj) in state.coefs.iter().zip(&data.subjects) {
        total += subject_log_likelihood(theta, state.noise_var, subj, b1, b2)?;
    }
    Ok(total)
}

fn axis_log_prior(sh: &AxisShrinkage, loadings: &DMatrix<f64>, nu: f64, hyper: &Hyperparameters) -> Option<f64> {
    if !(sh.a_first > 0.0 && sh.a_rest > 0.0 && sh.delta[0] > 0.0) {
        return None;
    }
    let mut lp = ln_gamma_pdf(sh.a_first, hyper.r_first, 1.0) + ln_gamma_pdf(sh.a_rest, hyper.r_rest, 1.0);
    lp += ln_gamma_pdf(sh.delta[0], sh.a_first, 1.0);
    let tail = ln_gamma_q(sh.a_rest, 1.0);
    for k in 1..sh.delta.len() {
        if !(sh.delta[k] > 1.0) {
            return None;
        }
        lp += ln_gamma_pdf(sh.delta[k], sh.a_rest, 1.0) - tail;
    }
    for k in 0..loadings.ncols() {
        for m in 0..loadings.nrows() {
            let rho = sh.local[(m, k)];
            if !(rho > 0.0) {
                return None;
            }
            lp += ln_gamma_pdf(rho, nu / 2.0, nu / 2.0);
            lp += ln_normal_pdf(loadings[(m, k)], 0.0, 1.0 / (rho * sh.tau[k]));
        }
    }
    Some(lp)
}

/// Joint log prior of every field of the state.
///
/// Variance components enter through the gamma densities of their
/// precisions. Truncated gamma factors include their normalizing tail mass.
pub fn log_prior(state: &ModelState, hyper: &Hyperparameters, data: &FunctionalDataset) -> Result<LogPrior> {
    let dims = state.dims();
    if dims.n != data.n_subjects() || dims.d != data.d {
        return arg_err("state and dataset disagree on dimensions");
    }
    let positive = |v: &f64| *v > 0.0;
    if !(state.coef_var.iter().all(positive)
        && state.score_var.iter().all(positive)
        && state.reg_var.iter().all(positive)
        && state.noise_var > 0.0)
    {
        return Ok(LogPrior::OutsideSupport);
    }
    let Some(ls) = axis_log_prior(&state.shrink_s, &state.load_s, hyper.nu_s, hyper) else {
        return Ok(LogPrior::OutsideSupport);
    };
    let Some(lt) = axis_log_prior(&state.shrink_t, &state.load_t, hyper.nu_t, hyper) else {
        return Ok(LogPrior::OutsideSupport);
    };
    let mut lp = ls + lt;
    lp += state
        .coef_var
        .iter()
        .map(|v| ln_gamma_pdf(1.0 / v, hyper.a_coef, hyper.b_coef))
        .sum::<f64>();
    lp += state
        .score_var
        .iter()
        .map(|v| ln_gamma_pdf(1.0 / v, hyper.a_score, hyper.b_score))
        .sum::<f64>();
    lp += ln_gamma_pdf(1.0 / state.noise_var, hyper.a_noise, hyper.b_noise);
    for (b, w) in state.reg.iter().zip(state.reg_var.iter()) {
        lp += ln_gamma_pdf(1.0 / w, 0.5, 0.5) + ln_normal_pdf(*b, 0.0, *w);
    }
    for (i, subj) in data.subjects.iter().enumerate() {
        let mean = state.score_mean(&subj.x);
        for (j, e) in state.scores[i].iter().enumerate() {
            lp += ln_normal_pdf(*e, mean[j], state.score_var[j]);
        }
        let resid = &state.coefs[i] - state.factor_part(i);
        for (j, z) in resid.iter().enumerate() {
            lp += ln_normal_pdf(*z, 0.0, state.coef_var[j]);
        }
    }
    Ok(LogPrior::Finite(lp))
}
