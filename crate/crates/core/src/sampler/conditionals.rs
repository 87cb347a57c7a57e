//! Full conditional distributions of every Gibbs block.
//!
//! Gaussian blocks are returned in canonical form (precision and linear
//! term) and gamma blocks as `(shape, rate)` of the relevant precision, so
//! their moments can be checked without sampling.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use super::context::SamplerContext;
use crate::error::{Error, Result};
use crate::model::{AxisShrinkage, Hyperparameters, ModelState};
use crate::random::std_normal;
use crate::splines::eval_surface;
use crate::Axis;

const JITTER: f64 = 1e-10;

/// `N(Q⁻¹ b, Q⁻¹)` given precision `Q` and linear term `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianConditional {
    pub precision: DMatrix<f64>,
    pub linear: DVector<f64>,
}

impl GaussianConditional {
    pub fn factor(&self) -> Result<Cholesky<f64, Dyn>> {
        robust_cholesky(&self.precision)
    }

    pub fn mean(&self) -> Result<DVector<f64>> {
        Ok(self.factor()?.solve(&self.linear))
    }

    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        Ok(self.factor()?.inverse())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let chol = self.factor()?;
        Ok(draw_canonical(&chol, &self.linear, rng))
    }
}

/// Gamma full conditional `Ga(shape, rate)` of a precision-type quantity,
/// optionally truncated below.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaConditional {
    pub shape: f64,
    pub rate: f64,
    pub lower: Option<f64>,
}

impl GammaConditional {
    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn variance(&self) -> f64 {
        self.shape / (self.rate * self.rate)
    }
}

/// Cholesky factor, retrying once with relative diagonal jitter.
pub(crate) fn robust_cholesky(a: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok(c);
    }
    let mut jittered = a.clone();
    for j in 0..a.nrows() {
        jittered[(j, j)] += JITTER * a[(j, j)].abs().max(f64::MIN_POSITIVE);
    }
    Cholesky::new(jittered).ok_or_else(|| Error::Numerical("conditional precision is not positive definite after jitter".into()))
}

/// Draw `x = L⁻ᵀ(L⁻¹ b + z)` so that `x ~ N(Q⁻¹b, Q⁻¹)` for `Q = LLᵀ`.
pub(crate) fn draw_canonical<R: Rng + ?Sized>(chol: &Cholesky<f64, Dyn>, linear: &DVector<f64>, rng: &mut R) -> DVector<f64> {
    let l = chol.l_dirty();
    let mut w = l.solve_lower_triangular(linear).expect("Cholesky factor has a positive diagonal");
    for v in w.iter_mut() {
        *v += std_normal(rng);
    }
    l.tr_solve_lower_triangular(&w).expect("Cholesky factor has a positive diagonal")
}

// ---- subject level ----

/// Precision of `vec(Θ_i)` for subjects in missingness group `group`.
pub fn coef_precision(state: &ModelState, ctx: &SamplerContext, group: usize) -> DMatrix<f64> {
    let mut q = &ctx.group_gram[group] / state.noise_var;
    for j in 0..q.nrows() {
        q[(j, j)] += 1.0 / state.coef_var[j];
    }
    q
}

pub fn coef_linear(state: &ModelState, ctx: &SamplerContext, i: usize) -> DVector<f64> {
    let prior_mean = state.factor_part(i);
    let mut b = &ctx.dty[i] / state.noise_var;
    for (j, m) in prior_mean.iter().enumerate() {
        b[j] += m / state.coef_var[j];
    }
    b
}

/// Full conditional of `vec(Θ_i)` given `y_i`, loadings, scores, `Σ` and `φ²`.
pub fn coef_conditional(state: &ModelState, ctx: &SamplerContext, i: usize) -> GaussianConditional {
    GaussianConditional {
        precision: coef_precision(state, ctx, ctx.group_of[i]),
        linear: coef_linear(state, ctx, i),
    }
}

/// Precision of `vec(η_i)`, shared across subjects: `H⁻¹ + Kᵀ Σ⁻¹ K`.
pub fn score_precision(state: &ModelState) -> DMatrix<f64> {
    let k = state.factor_loading();
    let mut weighted = k.clone();
    for (r, mut row) in weighted.row_iter_mut().enumerate() {
        row /= state.coef_var[r];
    }
    let mut q = k.tr_mul(&weighted);
    for j in 0..q.nrows() {
        q[(j, j)] += 1.0 / state.score_var[j];
    }
    q
}

pub fn score_linear(state: &ModelState, ctx: &SamplerContext, i: usize, k: &DMatrix<f64>) -> DVector<f64> {
    let theta = &state.coefs[i];
    let weighted = DVector::from_fn(theta.len(), |j, _| theta[j] / state.coef_var[j]);
    let mut b = k.tr_mul(&weighted);
    let mean = state.score_mean(&ctx.data.subjects[i].x);
    for j in 0..b.len() {
        b[j] += mean[j] / state.score_var[j];
    }
    b
}

pub fn score_conditional(state: &ModelState, ctx: &SamplerContext, i: usize) -> GaussianConditional {
    let k = state.factor_loading();
    GaussianConditional {
        precision: score_precision(state),
        linear: score_linear(state, ctx, i, &k),
    }
}

// ---- loadings ----

/// Regression view of one loading matrix: `R_i = L C_i + E_i`, with
/// independent entry variances `V`.
pub(crate) struct AxisRegression {
    pub responses: Vec<DMatrix<f64>>,
    pub factors: Vec<DMatrix<f64>>,
    pub variances: DMatrix<f64>,
}

pub(crate) fn axis_regression(state: &ModelState, axis: Axis) -> AxisRegression {
    let d = state.dims();
    let var_s = DMatrix::from_column_slice(d.p1, d.p2, state.coef_var.as_slice());
    match axis {
        Axis::S => AxisRegression {
            responses: state.coefs.clone(),
            factors: state.scores.iter().map(|e| e * state.load_t.transpose()).collect(),
            variances: var_s,
        },
        Axis::T => AxisRegression {
            responses: state.coefs.iter().map(|c| c.transpose()).collect(),
            factors: state.scores.iter().map(|e| e.transpose() * state.load_s.transpose()).collect(),
            variances: var_s.transpose(),
        },
    }
}

pub(crate) fn loading_conditionals(reg: &AxisRegression, shrink: &AxisShrinkage) -> Vec<GaussianConditional> {
    let (p, q) = shrink.local.shape();
    let r = reg.variances.ncols();
    // Cross-products per response column, shared by every loading row.
    let mut cross = vec![DMatrix::<f64>::zeros(q, q); r];
    for c in &reg.factors {
        for (col, acc) in cross.iter_mut().enumerate() {
            let v = c.column(col);
            acc.ger(1.0, &v, &v, 1.0);
        }
    }
    (0..p)
        .map(|m| {
            let mut prec = DMatrix::zeros(q, q);
            let mut lin = DVector::zeros(q);
            for col in 0..r {
                let w = 1.0 / reg.variances[(m, col)];
                prec += &cross[col] * w;
                for (resp, c) in reg.responses.iter().zip(&reg.factors) {
                    lin.axpy(w * resp[(m, col)], &c.column(col), 1.0);
                }
            }
            for k in 0..q {
                prec[(k, k)] += shrink.precision(m, k);
            }
            GaussianConditional {
                precision: prec,
                linear: lin,
            }
        })
        .collect()
}

/// Full conditional of row `m` of the loading matrix for `axis`.
pub fn loading_row_conditional(state: &ModelState, axis: Axis, m: usize) -> GaussianConditional {
    let reg = axis_regression(state, axis);
    let shrink = match axis {
        Axis::S => &state.shrink_s,
        Axis::T => &state.shrink_t,
    };
    loading_conditionals(&reg, shrink).swap_remove(m)
}

/// Local precision `ρ_mk`: `Ga(ν/2 + 1/2, ν/2 + τ_k λ_mk² / 2)`.
pub fn local_conditional(shrink: &AxisShrinkage, loadings: &DMatrix<f64>, nu: f64, m: usize, k: usize) -> GammaConditional {
    let l = loadings[(m, k)];
    GammaConditional {
        shape: 0.5 * (nu + 1.0),
        rate: 0.5 * (nu + shrink.tau[k] * l * l),
        lower: None,
    }
}

/// Multiplicative factor `δ_h` given the others; truncated at 1 beyond the first.
pub fn delta_conditional(shrink: &AxisShrinkage, loadings: &DMatrix<f64>, h: usize) -> GammaConditional {
    let (p, q) = loadings.shape();
    let a = if h == 0 { shrink.a_first } else { shrink.a_rest };
    let mut rate = 1.0;
    for k in h..q {
        let tau_without = shrink.tau[k] / shrink.delta[h];
        let s: f64 = (0..p).map(|m| shrink.local[(m, k)] * loadings[(m, k)].powi(2)).sum();
        rate += 0.5 * tau_without * s;
    }
    GammaConditional {
        shape: a + 0.5 * (p * (q - h)) as f64,
        rate,
        lower: (h > 0).then_some(1.0),
    }
}

// ---- variance components and regression ----

/// Precision `1/σ_j` of coefficient residual `j`.
pub fn coef_var_conditional(state: &ModelState, hyper: &Hyperparameters, j: usize) -> GammaConditional {
    let n = state.coefs.len();
    let p1 = state.load_s.nrows();
    let (m, l) = (j % p1, j / p1);
    let mut ss = 0.0;
    for i in 0..n {
        let fp = (state.load_s.row(m) * &state.scores[i] * state.load_t.row(l).transpose())[(0, 0)];
        let z = state.coefs[i][(m, l)] - fp;
        ss += z * z;
    }
    GammaConditional {
        shape: hyper.a_coef + 0.5 * n as f64,
        rate: hyper.b_coef + 0.5 * ss,
        lower: None,
    }
}

/// Precision `1/h_j` of latent score `j`.
pub fn score_var_conditional(state: &ModelState, ctx: &SamplerContext, hyper: &Hyperparameters, j: usize) -> GammaConditional {
    let n = state.scores.len();
    let mut ss = 0.0;
    for i in 0..n {
        let mean = state.reg.column(j).dot(&ctx.data.subjects[i].x);
        let e = state.scores[i][j] - mean;
        ss += e * e;
    }
    GammaConditional {
        shape: hyper.a_score + 0.5 * n as f64,
        rate: hyper.b_score + 0.5 * ss,
        lower: None,
    }
}

/// Sum of squared residuals over observed cells.
pub fn residual_sum_of_squares(state: &ModelState, ctx: &SamplerContext) -> Result<f64> {
    let mut ssr = 0.0;
    for (theta, subj) in state.coefs.iter().zip(&ctx.data.subjects) {
        let fitted = eval_surface(theta, ctx.b1, ctx.b2)?;
        for ((y, f), &m) in subj.y.iter().zip(fitted.iter()).zip(subj.mask.iter()) {
            if m {
                ssr += (y - f) * (y - f);
            }
        }
    }
    Ok(ssr)
}

/// Precision `1/φ²` of the measurement error.
pub fn noise_conditional(state: &ModelState, ctx: &SamplerContext, hyper: &Hyperparameters) -> Result<GammaConditional> {
    let ssr = residual_sum_of_squares(state, ctx)?;
    Ok(GammaConditional {
        shape: hyper.a_noise + 0.5 * ctx.n_observed as f64,
        rate: hyper.b_noise + 0.5 * ssr,
        lower: None,
    })
}

/// Precision `1/ω_jl` of a regression coefficient's mixing variance.
pub fn reg_var_conditional(state: &ModelState, j: usize, l: usize) -> GammaConditional {
    let b = state.reg[(j, l)];
    GammaConditional {
        shape: 1.0,
        rate: 0.5 + 0.5 * b * b,
        lower: None,
    }
}

/// Column `l` of `β`: precision `diag(1/ω_·l) + XᵀX / h_l`.
pub fn reg_column_conditional(state: &ModelState, ctx: &SamplerContext, l: usize) -> GaussianConditional {
    let h = state.score_var[l];
    let d = state.reg.nrows();
    let mut prec = &ctx.xtx / h;
    for j in 0..d {
        prec[(j, j)] += 1.0 / state.reg_var[(j, l)];
    }
    let eta_l = DVector::from_fn(state.scores.len(), |i, _| state.scores[i][l]);
    let linear = ctx.covariates.tr_mul(&eta_l) / h;
    GaussianConditional { precision: prec, linear }
}
