//! Synthetic longitudinal functional data from three covariance scenarios,
//! ground truth on the grid, relative errors, the empirical estimator, and
//! the Monte Carlo experiments built on them.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::{compute_criteria, CriteriaReport};
use crate::error::{arg_err, Error, Result};
use crate::model::{FunctionalDataset, Hyperparameters, SubjectRecord};
use crate::posterior::{eigen_decompose, marginalize, summarize, KernelGrid, MarginalCovariance, SummaryOptions};
use crate::random::{std_normal, stream};
use crate::sampler::{run_chain, ChainConfig};
use crate::splines::{build_basis, tensor_design, BasisConfig, BasisMatrix};
use crate::Axis;

/// Covariance scenario; serialized as its number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Case {
    /// Sine marginal in `s` times a Matérn-3/2 marginal in `t`.
    One,
    /// Shifted-sine marginal in `s` times a cosine series in `t`.
    Two,
    /// Stationary non-separable kernel.
    Three,
}

impl TryFrom<u8> for Case {
    type Error = Error;

    fn try_from(id: u8) -> Result<Self> {
        Case::from_id(id)
    }
}

impl From<Case> for u8 {
    fn from(c: Case) -> u8 {
        c.id()
    }
}

impl Case {
    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(Case::One),
            2 => Ok(Case::Two),
            3 => Ok(Case::Three),
            _ => arg_err(format!("unknown scenario {id}; expected 1, 2 or 3")),
        }
    }

    pub fn id(self) -> u8 {
        match self {
            Case::One => 1,
            Case::Two => 2,
            Case::Three => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub case: Case,
    pub n_subjects: usize,
    pub n_s: usize,
    pub n_t: usize,
    pub noise_var: f64,
    pub matern_sigma2: f64,
    pub matern_rho: f64,
    pub alpha: f64,
    pub k_terms: usize,
    /// When set, every noiseless surface is projected onto this tensor
    /// spline space before noise is added.
    pub projection: Option<(BasisConfig, BasisConfig)>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            case: Case::One,
            n_subjects: 30,
            n_s: 10,
            n_t: 20,
            noise_var: 0.025,
            matern_sigma2: 1.0,
            matern_rho: 0.5,
            alpha: 1.0,
            k_terms: 50,
            projection: None,
        }
    }
}

impl ScenarioSpec {
    pub fn new(case: Case, n_subjects: usize) -> Self {
        Self {
            case,
            n_subjects,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_s == 0 || self.n_t == 0 {
            return arg_err("grids need at least one point");
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return arg_err(format!("noise variance {} must be nonnegative", self.noise_var));
        }
        if !(self.matern_sigma2 > 0.0 && self.matern_rho > 0.0 && self.alpha > 0.0 && self.k_terms > 0) {
            return arg_err("scenario parameters must be positive");
        }
        Ok(())
    }

    pub fn s_grid(&self) -> Vec<f64> {
        unit_grid(self.n_s)
    }

    pub fn t_grid(&self) -> Vec<f64> {
        unit_grid(self.n_t)
    }
}

/// `n` equally spaced points on `[0, 1]` including both endpoints.
pub fn unit_grid(n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..n).map(|j| j as f64 / (n - 1) as f64).collect(),
    }
}

fn check_unit(v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{v} lies outside [0, 1]")))
    }
}

/// Marginal kernel in `s` of the separable cases.
fn kernel_s(spec: &ScenarioSpec, s: f64, s2: f64) -> f64 {
    let shift = match spec.case {
        Case::Two => 0.5,
        _ => 0.0,
    };
    (1..=2)
        .map(|j| {
            let w = (j as f64 - shift) * PI;
            2.0 * (w * s).sin() * (w * s2).sin() / (w * w)
        })
        .sum()
}

/// Marginal kernel in `t` of the separable cases.
fn kernel_t(spec: &ScenarioSpec, t: f64, t2: f64) -> f64 {
    match spec.case {
        Case::Two => (1..=spec.k_terms)
            .map(|k| {
                let k = k as f64;
                k.powf(-2.0 * spec.alpha) * (k * PI * t).cos() * (k * PI * t2).cos()
            })
            .sum(),
        _ => {
            let r = 3f64.sqrt() * (t - t2).abs() / spec.matern_rho;
            spec.matern_sigma2 * (1.0 + r) * (-r).exp()
        }
    }
}

/// `K{(s,t),(s',t')}` of the scenario.
pub fn true_kernel(spec: &ScenarioSpec, s: f64, t: f64, s2: f64, t2: f64) -> Result<f64> {
    for v in [s, t, s2, t2] {
        check_unit(v)?;
    }
    Ok(match spec.case {
        Case::One | Case::Two => kernel_s(spec, s, s2) * kernel_t(spec, t, t2),
        Case::Three => {
            let a = (t - t2).powi(2) + 1.0;
            (-(s - s2).powi(2) / a).exp() / a
        }
    })
}

/// `μ(s, t)` of the scenario.
pub fn true_mean(spec: &ScenarioSpec, s: f64, t: f64) -> Result<f64> {
    check_unit(s)?;
    check_unit(t)?;
    Ok(match spec.case {
        Case::One => (1.0 / (5.0 * (s + 1.0).sqrt())).sqrt() * (5.0 * t).sin(),
        Case::Two => 5.0 * (1.0 - (s - 0.5).powi(2) - (t - 0.5).powi(2)).sqrt(),
        Case::Three => (1.0 + (PI * s).sin() + (PI * t).cos()).sqrt(),
    })
}

/// Truth on the evaluation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub s_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    /// `n_s x n_t`.
    pub mean: DMatrix<f64>,
    pub kernel: KernelGrid,
    pub marginal_s: DMatrix<f64>,
    pub marginal_t: DMatrix<f64>,
    /// Two leading eigenfunctions in `s` (columns), smoothed onto the fitting basis.
    pub psi: DMatrix<f64>,
    /// Two leading eigenfunctions in `t` (columns), smoothed onto the fitting basis.
    pub phi: DMatrix<f64>,
}

fn grid_gram(spec: &ScenarioSpec, s: &[f64], t: &[f64]) -> Result<DMatrix<f64>> {
    let ns = s.len();
    let n = ns * t.len();
    let mut g = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let v = true_kernel(spec, s[a % ns], t[a / ns], s[b % ns], t[b / ns])?;
            g[(a, b)] = v;
            g[(b, a)] = v;
        }
    }
    Ok(g)
}

/// Square root `L` with `L Lᵀ = gram`, via Cholesky or, when that fails, the
/// clamped eigen decomposition.
pub fn covariance_root(gram: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(c) = Cholesky::new(gram.clone()) {
        return c.l();
    }
    let e = SymmetricEigen::new(gram.clone());
    let mut v = e.eigenvectors;
    for (k, mut col) in v.column_iter_mut().enumerate() {
        col *= e.eigenvalues[k].max(0.0).sqrt();
    }
    v
}

/// Least-squares projection of grid values onto a spline basis.
fn project(values: &DVector<f64>, basis: &BasisMatrix) -> DVector<f64> {
    let b = &basis.values;
    let coef = (b.tr_mul(b))
        .cholesky()
        .map(|c| c.solve(&b.tr_mul(values)))
        .unwrap_or_else(|| b.clone().svd(true, true).solve(values, 1e-12).expect("SVD solve"));
    b * coef
}

/// Unit discrete L² norm with grid-spacing weight and a fixed sign (largest
/// absolute entry positive).
fn normalize_function(f: &mut DVector<f64>, points: &[f64]) {
    let w = crate::posterior::Quadrature::Uniform.weights(points);
    let norm = f.iter().zip(&w).map(|(v, w)| v * v * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        *f /= norm;
    }
    let imax = f.iamax();
    if f[imax] < 0.0 {
        f.neg_mut();
    }
}

fn leading_eigenfunctions(
    spec: &ScenarioSpec,
    axis: Axis,
    marg: &MarginalCovariance,
    smoothing: &BasisMatrix,
) -> Result<DMatrix<f64>> {
    let points = &marg.points;
    let analytic = |j: usize, x: f64| -> Option<f64> {
        let j = j as f64 + 1.0;
        match (spec.case, axis) {
            (Case::One, Axis::S) => Some(2f64.sqrt() * (j * PI * x).sin()),
            (Case::Two, Axis::S) => Some(2f64.sqrt() * ((j - 0.5) * PI * x).sin()),
            (Case::Two, Axis::T) => Some(2f64.sqrt() * (j * PI * x).cos()),
            _ => None,
        }
    };
    let rank = 2.min(points.len());
    let numeric = if analytic(0, 0.0).is_none() {
        Some(eigen_decompose(marg, rank)?)
    } else {
        None
    };
    let mut out = DMatrix::zeros(points.len(), rank);
    for j in 0..rank {
        let raw = match &numeric {
            Some(e) => e.eigenfunctions.column(j).into_owned(),
            None => DVector::from_iterator(points.len(), points.iter().map(|&x| analytic(j, x).unwrap())),
        };
        let mut f = project(&raw, smoothing);
        normalize_function(&mut f, points);
        out.set_column(j, &f);
    }
    Ok(out)
}

/// Default fitting bases: cubic with knots `1/5..4/5` in `s` and
/// `1/6..5/6` plus a repeated `5/6` in `t`.
pub fn default_fit_bases() -> (BasisConfig, BasisConfig) {
    let s = BasisConfig::new(3, vec![0.2, 0.4, 0.6, 0.8], (0.0, 1.0)).expect("valid knots");
    let t = BasisConfig::new(3, vec![1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0, 4.0 / 6.0, 5.0 / 6.0, 5.0 / 6.0], (0.0, 1.0))
        .expect("valid knots");
    (s, t)
}

/// Ground truth on the scenario grid; eigenfunctions are smoothed onto the
/// given bases.
pub fn ground_truth(spec: &ScenarioSpec, smoothing: (&BasisConfig, &BasisConfig)) -> Result<GroundTruth> {
    spec.validate()?;
    let (s, t) = (spec.s_grid(), spec.t_grid());
    let mean = DMatrix::from_fn(s.len(), t.len(), |j, k| true_mean(spec, s[j], t[k]).expect("grid in [0,1]"));
    let kernel = KernelGrid {
        s_points: s.clone(),
        t_points: t.clone(),
        gram: grid_gram(spec, &s, &t)?,
    };
    let ms = marginalize(&kernel, Axis::S);
    let mt = marginalize(&kernel, Axis::T);
    let bs = build_basis(smoothing.0, &s)?;
    let bt = build_basis(smoothing.1, &t)?;
    let psi = leading_eigenfunctions(spec, Axis::S, &ms, &bs)?;
    let phi = leading_eigenfunctions(spec, Axis::T, &mt, &bt)?;
    Ok(GroundTruth {
        s_grid: s,
        t_grid: t,
        mean,
        marginal_s: ms.matrix,
        marginal_t: mt.matrix,
        psi,
        phi,
        kernel,
    })
}

/// Dataset of `spec.n_subjects` surfaces with intercept covariate `x = 1`.
pub fn generate<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Result<(FunctionalDataset, GroundTruth)> {
    let (fs, ft) = default_fit_bases();
    generate_with_smoothing(spec, (&fs, &ft), rng)
}

pub fn generate_with_smoothing<R: Rng + ?Sized>(
    spec: &ScenarioSpec,
    smoothing: (&BasisConfig, &BasisConfig),
    rng: &mut R,
) -> Result<(FunctionalDataset, GroundTruth)> {
    let truth = ground_truth(spec, smoothing)?;
    let (s, t) = (truth.s_grid.clone(), truth.t_grid.clone());
    let (ns, nt) = (s.len(), t.len());
    let root = covariance_root(&truth.kernel.gram);
    let mean = DVector::from_column_slice(truth.mean.as_slice());
    let projector = match &spec.projection {
        Some((ps, pt)) => {
            let d = tensor_design(&build_basis(ps, &s)?, &build_basis(pt, &t)?);
            let pinv = d.clone().pseudo_inverse(1e-12).map_err(|e| Error::Numerical(e.to_string()))?;
            Some(&d * pinv)
        }
        None => None,
    };
    let noise_sd = spec.noise_var.sqrt();
    let mut subjects = Vec::with_capacity(spec.n_subjects);
    for i in 0..spec.n_subjects {
        let z = DVector::from_fn(root.ncols(), |_, _| std_normal(rng));
        let mut f = &mean + &root * z;
        if let Some(p) = &projector {
            f = p * f;
        }
        let y = DMatrix::from_fn(ns, nt, |j, k| f[j + ns * k] + noise_sd * std_normal(rng));
        subjects.push(SubjectRecord::complete(format!("{}", i + 1), y, DVector::from_element(1, 1.0)));
    }
    let data = FunctionalDataset::new(subjects, s, t, 1)?;
    Ok((data, truth))
}

/// `Σ (f̂ − f)² / Σ f²` over a common grid.
pub fn relative_error(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return arg_err("estimate and truth are on different grids");
    }
    let den: f64 = truth.iter().map(|v| v * v).sum();
    if !(den > 0.0) {
        return arg_err("truth has zero norm");
    }
    let num: f64 = estimate.iter().zip(truth).map(|(e, f)| (e - f).powi(2)).sum();
    Ok(num / den)
}

/// Relative error of a function defined up to sign.
pub fn relative_error_unsigned(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    let neg: Vec<f64> = estimate.iter().map(|v| -v).collect();
    Ok(relative_error(estimate, truth)?.min(relative_error(&neg, truth)?))
}

/// Pointwise sample mean (`n_s x n_t`) and sample covariance of the
/// vectorized surfaces (denominator `n − 1`).
pub fn empirical_estimates(data: &FunctionalDataset) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = data.n_subjects();
    if n < 2 {
        return arg_err("the empirical estimator needs at least two subjects");
    }
    if !data.is_complete() {
        return arg_err("the empirical estimator needs complete grids");
    }
    let (ns, nt) = (data.s_grid.len(), data.t_grid.len());
    let ys = DMatrix::from_fn(ns * nt, n, |a, i| data.subjects[i].y[(a % ns, a / ns)]);
    let mean = DVector::from_fn(ns * nt, |a, _| ys.row(a).mean());
    let mut centred = ys;
    for mut col in centred.column_iter_mut() {
        col -= &mean;
    }
    let cov = &centred * centred.transpose() / (n - 1) as f64;
    Ok((DMatrix::from_column_slice(ns, nt, mean.as_slice()), (&cov + cov.transpose()) * 0.5))
}

/// Sampler settings for one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub basis_s: BasisConfig,
    pub basis_t: BasisConfig,
    pub hyper: Hyperparameters,
    pub chain: ChainConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        let (basis_s, basis_t) = default_fit_bases();
        Self {
            basis_s,
            basis_t,
            hyper: Hyperparameters::default(),
            chain: ChainConfig::default(),
        }
    }
}

/// Estimated quantities compared with the truth.
pub const QUANTITIES: [&str; 8] = ["mu", "K", "K_S", "K_T", "psi1", "psi2", "phi1", "phi2"];

/// Relative errors of one replication, in [`QUANTITIES`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationErrors {
    pub replication: usize,
    pub bayes: Option<Vec<f64>>,
    pub empirical: Vec<f64>,
}

/// One line of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub case: u8,
    pub n: usize,
    pub quantity: String,
    pub estimator: String,
    pub median: f64,
    pub q10: f64,
    pub q90: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub replications: Vec<ReplicationErrors>,
    /// Replications that failed, with the reason.
    pub failures: Vec<(usize, String)>,
}

impl ExperimentReport {
    pub fn row(&self, quantity: &str, estimator: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.quantity == quantity && r.estimator == estimator)
    }
}

/// Type-7 (linear interpolation) sample quantile.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Seed for replication `rep` of an experiment seeded with `seed`.
pub fn replication_seed(seed: u64, rep: usize) -> u64 {
    // SplitMix64 finalizer; distinct replications get well-separated seeds.
    let mut z = seed ^ (rep as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn estimate_errors(
    truth: &GroundTruth,
    mean: &[f64],
    gram: &DMatrix<f64>,
    ks: &DMatrix<f64>,
    kt: &DMatrix<f64>,
    psi: &DMatrix<f64>,
    phi: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let mut out = vec![
        relative_error(mean, truth.mean.as_slice())?,
        relative_error(gram.as_slice(), truth.kernel.gram.as_slice())?,
        relative_error(ks.as_slice(), truth.marginal_s.as_slice())?,
        relative_error(kt.as_slice(), truth.marginal_t.as_slice())?,
    ];
    for (est, tru) in [(psi, &truth.psi), (phi, &truth.phi)] {
        for j in 0..2 {
            out.push(relative_error_unsigned(est.column(j).as_slice(), tru.column(j).as_slice())?);
        }
    }
    Ok(out)
}

fn empirical_errors(data: &FunctionalDataset, truth: &GroundTruth) -> Result<Vec<f64>> {
    let (mean, gram) = empirical_estimates(data)?;
    let kernel = KernelGrid {
        s_points: data.s_grid.clone(),
        t_points: data.t_grid.clone(),
        gram,
    };
    let ms = marginalize(&kernel, Axis::S);
    let mt = marginalize(&kernel, Axis::T);
    let es = eigen_decompose(&ms, 2)?;
    let et = eigen_decompose(&mt, 2)?;
    estimate_errors(truth, mean.as_slice(), &kernel.gram, &ms.matrix, &mt.matrix, &es.eigenfunctions, &et.eigenfunctions)
}

fn bayes_errors(data: &FunctionalDataset, truth: &GroundTruth, fit: &FitConfig, seed: u64) -> Result<Vec<f64>> {
    let mut chain = fit.chain.clone();
    chain.seed = seed;
    let draws = run_chain(data, &fit.hyper, &fit.basis_s, &fit.basis_t, &chain)?;
    if let Some(bad) = draws.failed_chains().next() {
        let f = bad.failure.as_ref().expect("failed chain has a failure record");
        return Err(Error::State(format!("chain {} failed at iteration {}: {}", bad.chain_id, f.iteration, f.message)));
    }
    let options = SummaryOptions {
        s_points: data.s_grid.clone(),
        t_points: data.t_grid.clone(),
        covariate: DVector::from_element(1, 1.0),
        alpha: 0.05,
        n_components: 2,
        quadrature: Default::default(),
        full_kernel: true,
    };
    let summary = summarize(&draws, &options)?;
    let eig = |a: &crate::posterior::AxisSummary| {
        DMatrix::from_fn(a.points.len(), 2, |i, j| a.eigenfunctions[j].center[i])
    };
    estimate_errors(
        truth,
        summary.mean.center.as_slice(),
        &summary.kernel.expect("full kernel requested").gram,
        &summary.marginal_s.mean_covariance,
        &summary.marginal_t.mean_covariance,
        &eig(&summary.marginal_s),
        &eig(&summary.marginal_t),
    )
}

/// Repeated generate → fit → summarize → relative error, summarized by
/// median and 10%/90% quantiles. `fit = None` runs the empirical estimator
/// only. Failed replications are recorded and skipped.
pub fn run_experiment(spec: &ScenarioSpec, fit: Option<&FitConfig>, n_replications: usize, seed: u64) -> Result<ExperimentReport> {
    spec.validate()?;
    if n_replications == 0 {
        return arg_err("at least one replication is required");
    }
    let (fs, ft) = match fit {
        Some(f) => (f.basis_s.clone(), f.basis_t.clone()),
        None => default_fit_bases(),
    };
    let results: Vec<Result<ReplicationErrors>> = (0..n_replications)
        .into_par_iter()
        .map(|rep| {
            let rseed = replication_seed(seed, rep);
            let mut rng = stream(rseed, 0);
            let (data, truth) = generate_with_smoothing(spec, (&fs, &ft), &mut rng)?;
            let empirical = empirical_errors(&data, &truth)?;
            let bayes = match fit {
                Some(f) => Some(bayes_errors(&data, &truth, f, rseed)?),
                None => None,
            };
            Ok(ReplicationErrors {
                replication: rep,
                bayes,
                empirical,
            })
        })
        .collect();
    let mut replications = Vec::new();
    let mut failures = Vec::new();
    for (rep, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => replications.push(v),
            Err(e) => failures.push((rep, e.to_string())),
        }
    }
    let mut rows = Vec::new();
    if !replications.is_empty() {
        for (qi, q) in QUANTITIES.iter().enumerate() {
            let mut push = |estimator: &str, vals: Vec<f64>| {
                if vals.is_empty() {
                    return;
                }
                rows.push(ReportRow {
                    case: spec.case.id(),
                    n: spec.n_subjects,
                    quantity: q.to_string(),
                    estimator: estimator.to_string(),
                    median: quantile(&vals, 0.5),
                    q10: quantile(&vals, 0.1),
                    q90: quantile(&vals, 0.9),
                });
            };
            if fit.is_some() {
                push("bayes", replications.iter().filter_map(|r| r.bayes.as_ref().map(|b| b[qi])).collect());
            }
            push("empirical", replications.iter().map(|r| r.empirical[qi]).collect());
        }
    }
    Ok(ExperimentReport {
        rows,
        replications,
        failures,
    })
}

/// One candidate of a basis-dimension comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub label: String,
    pub basis_s: BasisConfig,
    pub basis_t: BasisConfig,
}

impl Candidate {
    /// Cubic bases with `p1` and `p2` functions and equally spaced knots.
    pub fn cubic(p1: usize, p2: usize) -> Result<Self> {
        Ok(Self {
            label: format!("({p1}, {p2})"),
            basis_s: BasisConfig::cubic_with_dim(p1, (0.0, 1.0))?,
            basis_t: BasisConfig::cubic_with_dim(p2, (0.0, 1.0))?,
        })
    }
}

/// Mean and Monte Carlo standard error of each criterion for one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub label: String,
    pub dic: (f64, f64),
    pub bic1: (f64, f64),
    pub bic2: (f64, f64),
    pub reports: Vec<CriteriaReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub candidates: Vec<CandidateSummary>,
    pub failures: Vec<(usize, String, String)>,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, f64::NAN);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Fit every candidate to the same replicated datasets and average the
/// information criteria.
pub fn run_selection(
    spec: &ScenarioSpec,
    candidates: &[Candidate],
    hyper: &Hyperparameters,
    chain: &ChainConfig,
    n_replications: usize,
    seed: u64,
) -> Result<SelectionReport> {
    spec.validate()?;
    if candidates.is_empty() || n_replications == 0 {
        return arg_err("need at least one candidate and one replication");
    }
    let (fs, ft) = default_fit_bases();
    let per_rep: Vec<Vec<std::result::Result<CriteriaReport, String>>> = (0..n_replications)
        .into_par_iter()
        .map(|rep| {
            let rseed = replication_seed(seed, rep);
            let mut rng = stream(rseed, 0);
            let data = match generate_with_smoothing(spec, (&fs, &ft), &mut rng) {
                Ok((d, _)) => d,
                Err(e) => return vec![Err(e.to_string()); candidates.len()],
            };
            candidates
                .iter()
                .map(|c| {
                    let mut cfg = chain.clone();
                    cfg.seed = rseed;
                    let fit = || -> Result<CriteriaReport> {
                        let draws = run_chain(&data, hyper, &c.basis_s, &c.basis_t, &cfg)?;
                        if draws.failed_chains().next().is_some() {
                            return Err(Error::State("a chain failed".into()));
                        }
                        let b1 = build_basis(&c.basis_s, &data.s_grid)?;
                        let b2 = build_basis(&c.basis_t, &data.t_grid)?;
                        compute_criteria(&draws, &data, &b1, &b2)
                    };
                    fit().map_err(|e| e.to_string())
                })
                .collect()
        })
        .collect();
    let mut failures = Vec::new();
    let mut summaries = Vec::new();
    for (ci, c) in candidates.iter().enumerate() {
        let mut reports = Vec::new();
        for (rep, row) in per_rep.iter().enumerate() {
            match &row[ci] {
                Ok(r) => reports.push(r.clone()),
                Err(e) => failures.push((rep, c.label.clone(), e.clone())),
            }
        }
        let col = |f: fn(&CriteriaReport) -> f64| mean_se(&reports.iter().map(f).collect::<Vec<_>>());
        summaries.push(CandidateSummary {
            label: c.label.clone(),
            dic: col(|r| r.dic),
            bic1: col(|r| r.bic1),
            bic2: col(|r| r.bic2),
            reports,
        });
    }
    Ok(SelectionReport {
        candidates: summaries,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn kernel_spot_values() {
        let c3 = ScenarioSpec::new(Case::Three, 1);
        assert_eq!(true_kernel(&c3, 0.4, 0.2, 0.4, 0.2).unwrap(), 1.0);
        assert_abs_diff_eq!(true_kernel(&c3, 0.0, 0.0, 1.0, 0.0).unwrap(), (-1.0f64).exp(), epsilon = 1e-15);
        assert!(true_kernel(&c3, 1.2, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn mean_spot_values() {
        assert_abs_diff_eq!(true_mean(&ScenarioSpec::new(Case::Two, 1), 0.5, 0.5).unwrap(), 5.0, epsilon = 1e-15);
        assert_abs_diff_eq!(true_mean(&ScenarioSpec::new(Case::Three, 1), 0.5, 0.5).unwrap(), 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(true_mean(&ScenarioSpec::new(Case::One, 1), 0.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn first_sine_eigenvalue() {
        // Fine-grid operator eigenvalue of the case-1 marginal in s.
        let spec = ScenarioSpec::new(Case::One, 1);
        let n = 801;
        let pts = unit_grid(n);
        let m = DMatrix::from_fn(n, n, |i, j| kernel_s(&spec, pts[i], pts[j]));
        let e = eigen_decompose(
            &MarginalCovariance {
                axis: Axis::S,
                points: pts.clone(),
                matrix: m,
            },
            1,
        )
        .unwrap();
        assert_abs_diff_eq!(e.eigenvalues[0], 1.0 / (PI * PI), epsilon = 1e-3 / (PI * PI));
        let f = e.eigenfunctions.column(0);
        let sign = f[n / 2].signum();
        for (i, &x) in pts.iter().enumerate().step_by(100) {
            assert_abs_diff_eq!(sign * f[i], 2f64.sqrt() * (PI * x).sin(), epsilon = 2e-3);
        }
    }

    #[test]
    fn relative_error_examples() {
        let f = [1.0, -2.0, 0.5];
        assert_eq!(relative_error(&f, &f).unwrap(), 0.0);
        let two: Vec<f64> = f.iter().map(|v| 2.0 * v).collect();
        assert_eq!(relative_error(&two, &f).unwrap(), 1.0);
        let ones = [1.0; 7];
        let shifted = [1.3; 7];
        assert_abs_diff_eq!(relative_error(&shifted, &ones).unwrap(), 0.09, epsilon = 1e-15);
        assert!(relative_error(&f, &[0.0; 3]).is_err());
    }

    #[test]
    fn empirical_two_subjects() {
        let u = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, 2.0, 0.25]);
        let subjects = vec![
            SubjectRecord::complete("a", u.clone(), DVector::zeros(0)),
            SubjectRecord::complete("b", -&u, DVector::zeros(0)),
        ];
        let data = FunctionalDataset::new(subjects, vec![0.0, 1.0], vec![0.0, 1.0], 0).unwrap();
        let (m, g) = empirical_estimates(&data).unwrap();
        assert_eq!(m.amax(), 0.0);
        let v = DVector::from_column_slice(u.as_slice());
        assert!((g - 2.0 * &v * v.transpose()).amax() < 1e-15);
    }

    #[test]
    fn quantiles_type7() {
        let v = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_abs_diff_eq!(quantile(&v, 0.1), 1.3, epsilon = 1e-15);
        assert_eq!(quantile(&[7.0], 0.9), 7.0);
    }
}
