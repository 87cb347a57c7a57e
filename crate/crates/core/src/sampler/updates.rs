//! Gibbs block updates, applied in place.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::conditionals::{
    axis_regression, coef_linear, coef_precision, delta_conditional, draw_canonical, loading_conditionals,
    local_conditional, noise_conditional, reg_column_conditional, reg_var_conditional, robust_cholesky,
    score_linear, score_precision, score_var_conditional, coef_var_conditional, GammaConditional,
};
use super::context::SamplerContext;
use super::truncated_gamma::TruncatedGamma;
use crate::error::Result;
use crate::model::{AxisShrinkage, Hyperparameters, ModelState};
use crate::random::gamma;
use crate::Axis;

fn precision_to_variance(g: f64) -> f64 {
    1.0 / g.max(1e-300)
}

fn draw_gamma<R: Rng + ?Sized>(c: &GammaConditional, rng: &mut R) -> (f64, bool) {
    match c.lower {
        None => (gamma(rng, c.shape, c.rate).max(1e-300), false),
        Some(lower) => {
            let d = TruncatedGamma::new(c.shape, c.rate, lower).sample(rng);
            (d.value, d.fallback)
        }
    }
}

/// Draw every `Θ_i`, then every `vec(η_i)`, from their Gaussian full conditionals.
pub fn update_latent<R: Rng + ?Sized>(state: &mut ModelState, ctx: &SamplerContext, rng: &mut R) -> Result<()> {
    for g in 0..ctx.n_groups() {
        let chol = robust_cholesky(&coef_precision(state, ctx, g))?;
        for i in (0..ctx.n_subjects()).filter(|&i| ctx.group_of[i] == g) {
            let lin = coef_linear(state, ctx, i);
            let draw = draw_canonical(&chol, &lin, rng);
            let (p1, p2) = state.coefs[i].shape();
            state.coefs[i] = DMatrix::from_column_slice(p1, p2, draw.as_slice());
        }
    }
    if ctx.n_subjects() > 0 {
        let chol = robust_cholesky(&score_precision(state))?;
        let k = state.factor_loading();
        for i in 0..ctx.n_subjects() {
            let lin = score_linear(state, ctx, i, &k);
            let draw = draw_canonical(&chol, &lin, rng);
            let (q1, q2) = state.scores[i].shape();
            state.scores[i] = DMatrix::from_column_slice(q1, q2, draw.as_slice());
        }
    }
    Ok(())
}

fn update_shrinkage<R: Rng + ?Sized>(shrink: &mut AxisShrinkage, loadings: &DMatrix<f64>, nu: f64, rng: &mut R) -> usize {
    let (p, q) = loadings.shape();
    for k in 0..q {
        for m in 0..p {
            let c = local_conditional(shrink, loadings, nu, m, k);
            shrink.local[(m, k)] = draw_gamma(&c, rng).0;
        }
    }
    let mut fallbacks = 0;
    for h in 0..q {
        let c = delta_conditional(shrink, loadings, h);
        let (v, fb) = draw_gamma(&c, rng);
        shrink.delta[h] = v;
        fallbacks += usize::from(fb);
        shrink.recompute_tau();
    }
    fallbacks
}

/// Draw loading rows of `Λ` then `Γ`, then local precisions, then the
/// multiplicative factors. Returns how many truncated draws needed the
/// rejection fallback.
pub fn update_loadings<R: Rng + ?Sized>(state: &mut ModelState, hyper: &Hyperparameters, rng: &mut R) -> Result<usize> {
    for axis in [Axis::S, Axis::T] {
        let reg = axis_regression(state, axis);
        let shrink = match axis {
            Axis::S => &state.shrink_s,
            Axis::T => &state.shrink_t,
        };
        let conds = loading_conditionals(&reg, shrink);
        let mut rows = Vec::with_capacity(conds.len());
        for c in &conds {
            rows.push(c.sample(rng)?);
        }
        let target = match axis {
            Axis::S => &mut state.load_s,
            Axis::T => &mut state.load_t,
        };
        for (m, row) in rows.iter().enumerate() {
            target.set_row(m, &row.transpose());
        }
    }
    let mut fallbacks = update_shrinkage(&mut state.shrink_s, &state.load_s, hyper.nu_s, rng);
    fallbacks += update_shrinkage(&mut state.shrink_t, &state.load_t, hyper.nu_t, rng);
    Ok(fallbacks)
}

/// Draw `Σ`, `H`, `φ²`, `ω`, then `β` from their conjugate full conditionals.
pub fn update_scales<R: Rng + ?Sized>(
    state: &mut ModelState,
    ctx: &SamplerContext,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<()> {
    for j in 0..state.coef_var.len() {
        let c = coef_var_conditional(state, hyper, j);
        state.coef_var[j] = precision_to_variance(draw_gamma(&c, rng).0);
    }
    for j in 0..state.score_var.len() {
        let c = score_var_conditional(state, ctx, hyper, j);
        state.score_var[j] = precision_to_variance(draw_gamma(&c, rng).0);
    }
    let c = noise_conditional(state, ctx, hyper)?;
    state.noise_var = precision_to_variance(draw_gamma(&c, rng).0);
    let (d, ql) = state.reg.shape();
    for l in 0..ql {
        for j in 0..d {
            let c = reg_var_conditional(state, j, l);
            state.reg_var[(j, l)] = precision_to_variance(draw_gamma(&c, rng).0);
        }
    }
    if d > 0 {
        for l in 0..ql {
            let col: DVector<f64> = reg_column_conditional(state, ctx, l).sample(rng)?;
            state.reg.set_column(l, &col);
        }
    }
    Ok(())
}
