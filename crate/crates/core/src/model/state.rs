use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{FunctionalDataset, Hyperparameters};
use crate::error::{arg_err, Error, Result};
use crate::random::{gamma, std_normal};
use crate::sampler::TruncatedGamma;
use crate::splines::{tensor_design, BasisMatrix};

/// Variance bounds applied to prior draws at initialization only; very vague
/// gamma priors otherwise produce draws that under/overflow.
const INIT_VAR_MIN: f64 = 1e-8;
const INIT_VAR_MAX: f64 = 1e8;
const RIDGE_SCALE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub p1: usize,
    pub p2: usize,
    pub q1: usize,
    pub q2: usize,
    pub d: usize,
    pub n: usize,
}

impl ModelDims {
    pub fn coef_len(&self) -> usize {
        self.p1 * self.p2
    }

    pub fn score_len(&self) -> usize {
        self.q1 * self.q2
    }
}

/// Multiplicative gamma process shrinkage for one loading matrix.
///
/// Loading `(m, k)` has prior precision `local[(m, k)] * tau[k]` where
/// `tau[k] = delta[0] * ... * delta[k]`. Every `delta[k]` beyond the first is
/// constrained to exceed 1, so `tau` is strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisShrinkage {
    pub local: DMatrix<f64>,
    pub delta: DVector<f64>,
    pub tau: DVector<f64>,
    pub a_first: f64,
    pub a_rest: f64,
}

impl AxisShrinkage {
    pub fn recompute_tau(&mut self) {
        let mut acc = 1.0;
        for k in 0..self.delta.len() {
            acc *= self.delta[k];
            self.tau[k] = acc;
        }
    }

    #[inline]
    pub fn precision(&self, m: usize, k: usize) -> f64 {
        self.local[(m, k)] * self.tau[k]
    }

    /// Draw from the prior given the hyperprior shapes and local degrees `nu`.
    pub fn sample_prior<R: Rng + ?Sized>(
        p: usize,
        q: usize,
        nu: f64,
        r_first: f64,
        r_rest: f64,
        rng: &mut R,
    ) -> Self {
        let a_first = gamma(rng, r_first, 1.0);
        let a_rest = gamma(rng, r_rest, 1.0);
        let mut delta = DVector::zeros(q);
        delta[0] = gamma(rng, a_first, 1.0).max(f64::MIN_POSITIVE);
        let truncated = TruncatedGamma::new(a_rest, 1.0, 1.0);
        for k in 1..q {
            delta[k] = truncated.sample(rng).value;
        }
        let local = DMatrix::from_fn(p, q, |_, _| gamma(rng, nu / 2.0, nu / 2.0));
        let mut out = Self {
            local,
            delta,
            tau: DVector::zeros(q),
            a_first,
            a_rest,
        };
        out.recompute_tau();
        out
    }

    pub fn validate(&self, axis: &str) -> Result<()> {
        let bad = |msg: String| Err(Error::State(format!("{axis} shrinkage: {msg}")));
        if !(self.a_first > 0.0 && self.a_rest > 0.0) {
            return bad("hyperparameters must be positive".into());
        }
        if !(self.delta[0] > 0.0) {
            return bad(format!("first factor {} not positive", self.delta[0]));
        }
        if let Some(k) = (1..self.delta.len()).find(|&k| !(self.delta[k] > 1.0)) {
            return bad(format!("factor {} = {} violates truncation at 1", k, self.delta[k]));
        }
        if self.tau.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return bad("cumulative precisions must be finite and positive".into());
        }
        if self.tau.as_slice().windows(2).any(|w| !(w[0] < w[1])) {
            return bad("cumulative precisions not strictly increasing".into());
        }
        if self.local.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("local precisions must be finite and positive".into());
        }
        Ok(())
    }
}

/// One full configuration of latent variables and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    /// Per-subject basis coefficients `Θ_i` (`p1 x p2`).
    pub coefs: Vec<DMatrix<f64>>,
    /// Row loadings `Λ` (`p1 x q1`).
    pub load_s: DMatrix<f64>,
    /// Column loadings `Γ` (`p2 x q2`).
    pub load_t: DMatrix<f64>,
    /// Per-subject latent scores `η_i` (`q1 x q2`).
    pub scores: Vec<DMatrix<f64>>,
    /// Diagonal of `Σ`, variances of `vec(ζ_i)`.
    pub coef_var: DVector<f64>,
    /// Diagonal of `H`, variances of `vec(η_i)`.
    pub score_var: DVector<f64>,
    /// Residual variance `φ²`.
    pub noise_var: f64,
    /// Regression coefficients `β` (`d x q1q2`).
    pub reg: DMatrix<f64>,
    /// Prior variances `ω` of the regression coefficients.
    pub reg_var: DMatrix<f64>,
    pub shrink_s: AxisShrinkage,
    pub shrink_t: AxisShrinkage,
}

impl ModelState {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            p1: self.load_s.nrows(),
            p2: self.load_t.nrows(),
            q1: self.load_s.ncols(),
            q2: self.load_t.ncols(),
            d: self.reg.nrows(),
            n: self.coefs.len(),
        }
    }

    /// `Γ ⊗ Λ`, mapping `vec(η)` to `vec(Θ)`.
    pub fn factor_loading(&self) -> DMatrix<f64> {
        self.load_t.kronecker(&self.load_s)
    }

    /// Prior mean of `vec(η)` for covariates `x`: `βᵀ x`.
    pub fn score_mean(&self, x: &DVector<f64>) -> DVector<f64> {
        self.reg.tr_mul(x)
    }

    /// `Λ E[η | x] Γᵀ`, the coefficient matrix of the mean surface.
    pub fn mean_coefs(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dims();
        let m = self.score_mean(x);
        let eta = DMatrix::from_column_slice(d.q1, d.q2, m.as_slice());
        &self.load_s * eta * self.load_t.transpose()
    }

    /// `Λ η_i Γᵀ` for subject `i`.
    pub fn factor_part(&self, i: usize) -> DMatrix<f64> {
        &self.load_s * &self.scores[i] * self.load_t.transpose()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims();
        if self.load_t.ncols() != d.q2
            || self.coef_var.len() != d.coef_len()
            || self.score_var.len() != d.score_len()
            || self.reg.ncols() != d.score_len()
            || self.reg_var.shape() != self.reg.shape()
            || self.scores.len() != d.n
            || self.shrink_s.local.shape() != (d.p1, d.q1)
            || self.shrink_t.local.shape() != (d.p2, d.q2)
        {
            return Err(Error::State("inconsistent dimensions".into()));
        }
        if self.coefs.iter().any(|c| c.shape() != (d.p1, d.p2))
            || self.scores.iter().any(|e| e.shape() != (d.q1, d.q2))
        {
            return Err(Error::State("per-subject matrix shape mismatch".into()));
        }
        let positive = |v: &f64| v.is_finite() && *v > 0.0;
        if !positive(&self.noise_var) {
            return Err(Error::State(format!("residual variance {} not positive", self.noise_var)));
        }
        if !self.coef_var.iter().all(positive)
            || !self.score_var.iter().all(positive)
            || !self.reg_var.iter().all(positive)
        {
            return Err(Error::State("variances must be finite and positive".into()));
        }
        self.shrink_s.validate("row")?;
        self.shrink_t.validate("column")?;
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        if !finite(&self.load_s)
            || !finite(&self.load_t)
            || !finite(&self.reg)
            || !self.coefs.iter().all(finite)
            || !self.scores.iter().all(finite)
        {
            return Err(Error::State("non-finite coefficients".into()));
        }
        Ok(())
    }

    /// Joint prior draw of every field, latent coefficients included.
    pub fn sample_prior<R: Rng + ?Sized>(
        hyper: &Hyperparameters,
        p1: usize,
        p2: usize,
        covariates: &[DVector<f64>],
        rng: &mut R,
    ) -> Result<Self> {
        hyper.validate(p1, p2)?;
        let (q1, q2) = (hyper.q_s, hyper.q_t);
        let d = covariates.first().map_or(0, |x| x.len());
        if covariates.iter().any(|x| x.len() != d) {
            return arg_err("covariate vectors differ in length");
        }
        let shrink_s = AxisShrinkage::sample_prior(p1, q1, hyper.nu_s, hyper.r_first, hyper.r_rest, rng);
        let shrink_t = AxisShrinkage::sample_prior(p2, q2, hyper.nu_t, hyper.r_first, hyper.r_rest, rng);
        let load_s = DMatrix::from_fn(p1, q1, |m, k| std_normal(rng) / shrink_s.precision(m, k).sqrt());
        let load_t = DMatrix::from_fn(p2, q2, |l, j| std_normal(rng) / shrink_t.precision(l, j).sqrt());
        let coef_var = DVector::from_fn(p1 * p2, |_, _| 1.0 / gamma(rng, hyper.a_coef, hyper.b_coef));
        let score_var = DVector::from_fn(q1 * q2, |_, _| 1.0 / gamma(rng, hyper.a_score, hyper.b_score));
        let noise_var = 1.0 / gamma(rng, hyper.a_noise, hyper.b_noise);
        let reg_var = DMatrix::from_fn(d, q1 * q2, |_, _| 1.0 / gamma(rng, 0.5, 0.5));
        let reg = DMatrix::from_fn(d, q1 * q2, |j, l| reg_var[(j, l)].sqrt() * std_normal(rng));
        let mut state = Self {
            coefs: Vec::with_capacity(covariates.len()),
            load_s,
            load_t,
            scores: Vec::with_capacity(covariates.len()),
            coef_var,
            score_var,
            noise_var,
            reg,
            reg_var,
            shrink_s,
            shrink_t,
        };
        for x in covariates {
            let mean = state.score_mean(x);
            let eta = DVector::from_fn(q1 * q2, |j, _| mean[j] + state.score_var[j].sqrt() * std_normal(rng));
            let eta = DMatrix::from_column_slice(q1, q2, eta.as_slice());
            let mut theta = &state.load_s * &eta * state.load_t.transpose();
            for (j, v) in theta.iter_mut().enumerate() {
                *v += state.coef_var[j].sqrt() * std_normal(rng);
            }
            state.scores.push(eta);
            state.coefs.push(theta);
        }
        Ok(state)
    }
}

/// Marginal covariance of `vec(Θ_i)`: `(Γ⊗Λ) H (Γ⊗Λ)ᵀ + Σ`.
pub fn omega(state: &ModelState) -> DMatrix<f64> {
    let k = state.factor_loading();
    let mut scaled = k.clone();
    for (c, mut col) in scaled.column_iter_mut().enumerate() {
        col *= state.score_var[c];
    }
    let mut out = scaled * k.transpose();
    for j in 0..out.nrows() {
        out[(j, j)] += state.coef_var[j];
    }
    let sym = (&out + out.transpose()) * 0.5;
    sym
}

/// Starting state for a chain.
///
/// Scalars are drawn from their priors (variances clamped to a sane range),
/// regression coefficients start at zero, each `Θ_i` is the ridge projection
/// of the subject's observed cells onto the tensor basis, and the residual
/// variance starts at the mean squared residual of those projections.
pub fn init_state<R: Rng + ?Sized>(
    hyper: &Hyperparameters,
    data: &FunctionalDataset,
    b1: &BasisMatrix,
    b2: &BasisMatrix,
    rng: &mut R,
) -> Result<ModelState> {
    let (p1, p2) = (b1.dim(), b2.dim());
    if b1.n_points() != data.s_grid.len() || b2.n_points() != data.t_grid.len() {
        return arg_err("bases must be evaluated on the dataset grids");
    }
    hyper.validate(p1, p2)?;
    let covariates: Vec<_> = data.subjects.iter().map(|s| s.x.clone()).collect();
    let mut state = ModelState::sample_prior(hyper, p1, p2, &covariates, rng)?;
    let clamp = |v: &mut f64| *v = v.clamp(INIT_VAR_MIN, INIT_VAR_MAX);
    state.coef_var.iter_mut().for_each(clamp);
    state.score_var.iter_mut().for_each(clamp);
    state.reg_var.iter_mut().for_each(clamp);
    clamp(&mut state.noise_var);
    state.reg.fill(0.0);
    for k in 0..hyper.q_s {
        for m in 0..p1 {
            state.load_s[(m, k)] = state.load_s[(m, k)].clamp(-INIT_VAR_MAX, INIT_VAR_MAX);
        }
    }
    for j in 0..hyper.q_t {
        for l in 0..p2 {
            state.load_t[(l, j)] = state.load_t[(l, j)].clamp(-INIT_VAR_MAX, INIT_VAR_MAX);
        }
    }
    for e in state.scores.iter_mut() {
        e.fill(0.0);
    }

    if data.n_subjects() > 0 {
        let design = tensor_design(b1, b2);
        let mut ssr = 0.0;
        let mut n_obs = 0usize;
        for (i, subj) in data.subjects.iter().enumerate() {
            let obs: Vec<usize> = subj
                .mask
                .iter()
                .enumerate()
                .filter_map(|(c, &m)| m.then_some(c))
                .collect();
            let p = p1 * p2;
            let mut gram = DMatrix::zeros(p, p);
            let mut rhs = DVector::zeros(p);
            for &c in &obs {
                let row = design.row(c);
                gram.ger(1.0, &row.transpose(), &row.transpose(), 1.0);
                rhs.axpy(subj.y[c], &row.transpose(), 1.0);
            }
            let ridge = RIDGE_SCALE * (gram.trace() / p as f64).max(1.0);
            for j in 0..p {
                gram[(j, j)] += ridge;
            }
            let theta = gram
                .cholesky()
                .ok_or_else(|| Error::Numerical("ridge system not positive definite".into()))?
                .solve(&rhs);
            for &c in &obs {
                let r = subj.y[c] - design.row(c).dot(&theta.transpose());
                ssr += r * r;
            }
            n_obs += obs.len();
            state.coefs[i] = DMatrix::from_column_slice(p1, p2, theta.as_slice());
        }
        if n_obs > 0 {
            state.noise_var = (ssr / n_obs as f64).clamp(1e-6, INIT_VAR_MAX);
        }
    }
    state.validate()?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SubjectRecord;
    use crate::random::stream;
    use crate::splines::{build_basis, BasisConfig};

    fn tiny_data(n: usize) -> (FunctionalDataset, BasisMatrix, BasisMatrix) {
        let s: Vec<f64> = vec![0.0, 0.3, 0.7, 1.0];
        let t = vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        let mut rng = stream(3, 0);
        let subjects = (0..n)
            .map(|i| {
                let y = DMatrix::from_fn(s.len(), t.len(), |j, k| (s[j] + t[k]).sin() + 0.1 * std_normal(&mut rng));
                SubjectRecord::complete(format!("s{i}"), y, DVector::from_vec(vec![1.0]))
            })
            .collect();
        let data = FunctionalDataset::new(subjects, s.clone(), t.clone(), 1).unwrap();
        let b1 = build_basis(&BasisConfig::new(2, vec![0.5], (0.0, 1.0)).unwrap(), &s).unwrap();
        let b2 = build_basis(&BasisConfig::new(3, vec![0.5], (0.0, 1.0)).unwrap(), &t).unwrap();
        (data, b1, b2)
    }

    #[test]
    fn init_is_valid_and_deterministic() {
        let (data, b1, b2) = tiny_data(4);
        let hyper = Hyperparameters::with_ranks(2, 3);
        let a = init_state(&hyper, &data, &b1, &b2, &mut stream(11, 0)).unwrap();
        let b = init_state(&hyper, &data, &b1, &b2, &mut stream(11, 0)).unwrap();
        assert_eq!(a, b);
        assert!(a.shrink_s.tau.as_slice().windows(2).all(|w| w[0] < w[1]));
        assert!(a.shrink_t.tau.as_slice().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a.coefs.len(), 4);
    }

    #[test]
    fn init_with_no_subjects() {
        let (data, b1, b2) = tiny_data(0);
        let state = init_state(&Hyperparameters::with_ranks(1, 1), &data, &b1, &b2, &mut stream(1, 0)).unwrap();
        assert!(state.coefs.is_empty());
        assert!(state.scores.is_empty());
    }

    #[test]
    fn init_rejects_excess_rank() {
        let (data, b1, b2) = tiny_data(1);
        let err = init_state(&Hyperparameters::with_ranks(5, 1), &data, &b1, &b2, &mut stream(1, 0));
        assert!(matches!(err, Err(Error::Argument(_))));
    }

    #[test]
    fn omega_degenerate_cases() {
        let (data, b1, b2) = tiny_data(1);
        let mut st = init_state(&Hyperparameters::with_ranks(1, 1), &data, &b1, &b2, &mut stream(2, 0)).unwrap();
        st.load_s.fill(0.0);
        st.load_t.fill(0.0);
        let om = omega(&st);
        assert_eq!(om, DMatrix::from_diagonal(&st.coef_var));

        st.load_s[(0, 0)] = 1.0;
        st.load_t[(0, 0)] = 1.0;
        st.score_var[0] = 2.5;
        st.coef_var.fill(0.0);
        let om = omega(&st);
        assert_eq!(om[(0, 0)], 2.5);
        assert_eq!(om.iter().filter(|&&v| v != 0.0).count(), 1);
    }
}
