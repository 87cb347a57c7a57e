//! Posterior summaries: mean surfaces, covariance kernels on evaluation
//! grids, marginal covariances, their eigenstructure with sign alignment, and
//! simultaneous credible bands.
//!
//! Grid functions of two arguments are stacked with `s` varying fastest, the
//! same ordering as `vec(Θ)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::model::{omega, ModelState};
use crate::sampler::PosteriorDraws;
use crate::splines::{build_basis, eval_surface, tensor_design, BasisMatrix};
use crate::Axis;

const SYMMETRY_TOL: f64 = 1e-8;
const SD_FLOOR: f64 = 1e-12;

/// Four-argument covariance `K{(s,t),(s',t')}` on a tensor grid.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGrid {
    pub s_points: Vec<f64>,
    pub t_points: Vec<f64>,
    /// `(n_s n_t) x (n_s n_t)`, row `j + n_s k` is the point `(s_j, t_k)`.
    pub gram: DMatrix<f64>,
}

impl KernelGrid {
    /// `K{(s_j,t_k),(s_j',t_k')}`.
    pub fn at(&self, j: usize, k: usize, j2: usize, k2: usize) -> f64 {
        let ns = self.s_points.len();
        self.gram[(j + ns * k, j2 + ns * k2)]
    }
}

/// Integration weights along one grid axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrature {
    /// Equal weights, each the average grid spacing.
    #[default]
    Uniform,
    /// Trapezoid rule, for non-uniform grids.
    Trapezoid,
}

impl Quadrature {
    /// Weights whose sum is the grid's extent (`1` for a single point).
    pub fn weights(self, points: &[f64]) -> Vec<f64> {
        let n = points.len();
        if n < 2 {
            return vec![1.0; n];
        }
        match self {
            Quadrature::Uniform => vec![(points[n - 1] - points[0]) / (n - 1) as f64; n],
            Quadrature::Trapezoid => (0..n)
                .map(|j| {
                    let left = if j > 0 { points[j] - points[j - 1] } else { 0.0 };
                    let right = if j + 1 < n { points[j + 1] - points[j] } else { 0.0 };
                    0.5 * (left + right)
                })
                .collect(),
        }
    }

    /// Weights rescaled to sum to one, used for averaging over an axis.
    pub fn averaging_weights(self, points: &[f64]) -> Vec<f64> {
        let w = self.weights(points);
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            w.iter().map(|v| v / total).collect()
        } else {
            vec![1.0 / points.len() as f64; points.len()]
        }
    }
}

/// Covariance of one axis, averaged over the other.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalCovariance {
    pub axis: Axis,
    pub points: Vec<f64>,
    pub matrix: DMatrix<f64>,
}

/// Leading eigenpairs of a marginal covariance operator.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSummary {
    pub points: Vec<f64>,
    /// Nonincreasing, clamped at zero.
    pub eigenvalues: DVector<f64>,
    /// Columns orthonormal under the quadrature weights.
    pub eigenfunctions: DMatrix<f64>,
    /// Share of the (clamped) total spectrum per component.
    pub fve: DVector<f64>,
    /// Negative eigenvalues set to zero, over the full spectrum.
    pub n_clamped: usize,
    /// Most negative eigenvalue before clamping (zero when none).
    pub most_negative: f64,
}

/// Pointwise centre and simultaneous band of a function.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionBand {
    pub center: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// Pointwise posterior standard deviation after flooring.
    pub sd: DVector<f64>,
    /// Critical value of the maximal standardized deviation.
    pub critical: f64,
    pub level: f64,
}

/// Result of sign alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSequence {
    pub aligned: Vec<DVector<f64>>,
    pub flipped: Vec<bool>,
}

/// `D Ω Dᵀ` on the tensor grid of the two bases.
pub fn kernel_from_omega(omega: &DMatrix<f64>, b1: &BasisMatrix, b2: &BasisMatrix) -> Result<KernelGrid> {
    let p = b1.dim() * b2.dim();
    if omega.shape() != (p, p) {
        return arg_err(format!("Ω must be {p}x{p}, got {}x{}", omega.nrows(), omega.ncols()));
    }
    let d = tensor_design(b1, b2);
    let gram = &d * omega * d.transpose();
    Ok(KernelGrid {
        s_points: b1.points.clone(),
        t_points: b2.points.clone(),
        gram: symmetrize(gram),
    })
}

/// Covariance kernel of one draw on the grid where `b1`, `b2` were evaluated.
pub fn covariance_kernel(state: &ModelState, b1: &BasisMatrix, b2: &BasisMatrix) -> Result<KernelGrid> {
    kernel_from_omega(&omega(state), b1, b2)
}

/// Mean surface `μ(x, s, t)` of one draw.
pub fn mean_surface(state: &ModelState, x: &DVector<f64>, b1: &BasisMatrix, b2: &BasisMatrix) -> Result<DMatrix<f64>> {
    if x.len() != state.reg.nrows() {
        return arg_err(format!("covariate has length {}, model expects {}", x.len(), state.reg.nrows()));
    }
    eval_surface(&state.mean_coefs(x), b1, b2)
}

/// Average the kernel over the other axis with equal weights.
pub fn marginalize(kernel: &KernelGrid, axis: Axis) -> MarginalCovariance {
    let w = match axis {
        Axis::S => vec![1.0 / kernel.t_points.len() as f64; kernel.t_points.len()],
        Axis::T => vec![1.0 / kernel.s_points.len() as f64; kernel.s_points.len()],
    };
    marginalize_weighted(kernel, axis, &w)
}

/// Average over the other axis with the given quadrature.
pub fn marginalize_with(kernel: &KernelGrid, axis: Axis, quad: Quadrature) -> MarginalCovariance {
    let other = match axis {
        Axis::S => &kernel.t_points,
        Axis::T => &kernel.s_points,
    };
    marginalize_weighted(kernel, axis, &quad.averaging_weights(other))
}

fn marginalize_weighted(kernel: &KernelGrid, axis: Axis, w: &[f64]) -> MarginalCovariance {
    let (ns, nt) = (kernel.s_points.len(), kernel.t_points.len());
    let matrix = match axis {
        Axis::S => DMatrix::from_fn(ns, ns, |j, j2| (0..nt).map(|k| w[k] * kernel.gram[(j + ns * k, j2 + ns * k)]).sum()),
        Axis::T => DMatrix::from_fn(nt, nt, |k, k2| (0..ns).map(|j| w[j] * kernel.gram[(j + ns * k, j + ns * k2)]).sum()),
    };
    MarginalCovariance {
        axis,
        points: match axis {
            Axis::S => kernel.s_points.clone(),
            Axis::T => kernel.t_points.clone(),
        },
        matrix: symmetrize(matrix),
    }
}

/// Both marginal covariances straight from `Ω`, without forming the full
/// kernel: `K_S = B1 (Σ_{ℓℓ'} G_T[ℓ,ℓ'] Ω_{ℓℓ'}) B1ᵀ` with
/// `G_T = B2ᵀ W B2`, and symmetrically for `K_T`.
pub fn marginals_from_omega(
    omega: &DMatrix<f64>,
    b1: &BasisMatrix,
    b2: &BasisMatrix,
    quad: Quadrature,
) -> Result<(MarginalCovariance, MarginalCovariance)> {
    let (p1, p2) = (b1.dim(), b2.dim());
    if omega.shape() != (p1 * p2, p1 * p2) {
        return arg_err("Ω does not match the basis dimensions");
    }
    let weighted_gram = |b: &BasisMatrix, w: &[f64]| {
        let mut scaled = b.values.clone();
        for (j, mut row) in scaled.row_iter_mut().enumerate() {
            row *= w[j];
        }
        b.values.tr_mul(&scaled)
    };
    let g_t = weighted_gram(b2, &quad.averaging_weights(&b2.points));
    let g_s = weighted_gram(b1, &quad.averaging_weights(&b1.points));
    let mut inner_s = DMatrix::<f64>::zeros(p1, p1);
    let mut inner_t = DMatrix::<f64>::zeros(p2, p2);
    for l2 in 0..p2 {
        for l in 0..p2 {
            let block = omega.view((p1 * l, p1 * l2), (p1, p1));
            inner_s += block * g_t[(l, l2)];
            // Σ_{m,m'} G_S[m,m'] Ω[(m,ℓ),(m',ℓ')]
            inner_t[(l, l2)] = block.component_mul(&g_s).sum();
        }
    }
    let ks = &b1.values * inner_s * b1.values.transpose();
    let kt = &b2.values * inner_t * b2.values.transpose();
    Ok((
        MarginalCovariance {
            axis: Axis::S,
            points: b1.points.clone(),
            matrix: symmetrize(ks),
        },
        MarginalCovariance {
            axis: Axis::T,
            points: b2.points.clone(),
            matrix: symmetrize(kt),
        },
    ))
}

/// Leading `rank` eigenpairs with the default uniform quadrature.
pub fn eigen_decompose(marg: &MarginalCovariance, rank: usize) -> Result<EigenSummary> {
    eigen_decompose_with(marg, rank, Quadrature::Uniform)
}

/// Eigenpairs of the integral operator `f ↦ Σ_j w_j K(·, s_j) f(s_j)`.
pub fn eigen_decompose_with(marg: &MarginalCovariance, rank: usize, quad: Quadrature) -> Result<EigenSummary> {
    let n = marg.points.len();
    if marg.matrix.shape() != (n, n) {
        return arg_err("marginal covariance does not match its grid");
    }
    if rank == 0 || rank > n {
        return arg_err(format!("rank {rank} must lie in 1..={n}"));
    }
    let scale = marg.matrix.amax().max(f64::MIN_POSITIVE);
    if (&marg.matrix - marg.matrix.transpose()).amax() > SYMMETRY_TOL * scale {
        return arg_err("marginal covariance is not symmetric");
    }
    let w = quad.weights(&marg.points);
    let root: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let a = DMatrix::from_fn(n, n, |i, j| {
        0.5 * root[i] * root[j] * (marg.matrix[(i, j)] + marg.matrix[(j, i)])
    });
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let most_negative = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::min);
    let n_clamped = eig.eigenvalues.iter().filter(|v| **v < 0.0).count();
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let eigenvalues = DVector::from_fn(rank, |k, _| eig.eigenvalues[order[k]].max(0.0));
    let eigenfunctions = DMatrix::from_fn(n, rank, |i, k| eig.eigenvectors[(i, order[k])] / root[i]);
    let fve = eigenvalues.map(|v| if total > 0.0 { v / total } else { 0.0 });
    Ok(EigenSummary {
        points: marg.points.clone(),
        eigenvalues,
        eigenfunctions,
        fve,
        n_clamped,
        most_negative,
    })
}

/// Flip each function when its negative lies closer to the running mean of
/// the functions already aligned. The first function is the reference.
pub fn align_signs(draws: &[DVector<f64>]) -> AlignedSequence {
    let mut aligned = Vec::with_capacity(draws.len());
    let mut flipped = Vec::with_capacity(draws.len());
    let mut sum: Option<DVector<f64>> = None;
    for (k, f) in draws.iter().enumerate() {
        let flip = match &sum {
            None => false,
            Some(s) => {
                let mean = s / k as f64;
                (-f - &mean).norm_squared() < (f - &mean).norm_squared()
            }
        };
        let g = if flip { -f } else { f.clone() };
        match &mut sum {
            None => sum = Some(g.clone()),
            Some(s) => *s += &g,
        }
        aligned.push(g);
        flipped.push(flip);
    }
    AlignedSequence { aligned, flipped }
}

/// Simultaneous band from function draws (one draw per row).
///
/// The critical value is the `⌈(1−α) n⌉`-th smallest maximal standardized
/// deviation, so at least that many draws lie entirely inside the band.
pub fn simultaneous_band(draws: &DMatrix<f64>, alpha: f64) -> Result<FunctionBand> {
    let (n, g) = draws.shape();
    if n < 2 {
        return arg_err("a simultaneous band needs at least two draws");
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return arg_err(format!("alpha {alpha} must lie in (0, 1)"));
    }
    let center = DVector::from_fn(g, |u, _| draws.column(u).mean());
    let raw_sd = DVector::from_fn(g, |u, _| {
        let m = center[u];
        (draws.column(u).iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    });
    let scale = raw_sd.amax().max(center.amax());
    let floor = if scale > 0.0 { SD_FLOOR * scale } else { f64::MIN_POSITIVE };
    let sd = raw_sd.map(|v| v.max(floor));
    let mut devs: Vec<f64> = (0..n)
        .map(|i| (0..g).map(|u| (draws[(i, u)] - center[u]).abs() / sd[u]).fold(0.0, f64::max))
        .collect();
    let within = devs.clone();
    devs.sort_by(f64::total_cmp);
    let rank = (((1.0 - alpha) * n as f64).ceil() as usize).clamp(1, n);
    let mut critical = devs[rank - 1];
    // Guard the last ulp: every draw counted inside must be inside the
    // band as computed in floating point.
    loop {
        let lower = DVector::from_fn(g, |u, _| center[u] - critical * sd[u]);
        let upper = DVector::from_fn(g, |u, _| center[u] + critical * sd[u]);
        let ok = (0..n)
            .filter(|&i| within[i] <= devs[rank - 1])
            .all(|i| (0..g).all(|u| draws[(i, u)] >= lower[u] && draws[(i, u)] <= upper[u]));
        if ok {
            return Ok(FunctionBand {
                center,
                lower,
                upper,
                sd,
                critical,
                level: 1.0 - alpha,
            });
        }
        critical = critical * (1.0 + 4.0 * f64::EPSILON) + f64::MIN_POSITIVE;
    }
}

/// Band that collapses onto a single function.
fn degenerate_band(f: &DVector<f64>, alpha: f64) -> FunctionBand {
    FunctionBand {
        center: f.clone(),
        lower: f.clone(),
        upper: f.clone(),
        sd: DVector::zeros(f.len()),
        critical: 0.0,
        level: 1.0 - alpha,
    }
}

fn band_from_rows(rows: &[DVector<f64>], alpha: f64) -> Result<FunctionBand> {
    if rows.len() == 1 {
        return Ok(degenerate_band(&rows[0], alpha));
    }
    let g = rows[0].len();
    let m = DMatrix::from_fn(rows.len(), g, |i, u| rows[i][u]);
    simultaneous_band(&m, alpha)
}

/// Evaluation grids and options for [`summarize`].
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryOptions {
    pub s_points: Vec<f64>,
    pub t_points: Vec<f64>,
    /// Covariate value at which the mean surface is reported.
    pub covariate: DVector<f64>,
    pub alpha: f64,
    /// Eigencomponents reported per axis.
    pub n_components: usize,
    pub quadrature: Quadrature,
    /// Also form the posterior mean of the full four-argument kernel.
    pub full_kernel: bool,
}

/// Posterior summary of one marginal axis.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisSummary {
    pub axis: Axis,
    pub points: Vec<f64>,
    pub mean_covariance: DMatrix<f64>,
    /// Posterior mean eigenvalues per component.
    pub eigenvalues: DVector<f64>,
    /// Equal-tailed `1−α` interval per eigenvalue.
    pub eigenvalue_lower: DVector<f64>,
    pub eigenvalue_upper: DVector<f64>,
    /// Aligned eigenfunction bands, one per component.
    pub eigenfunctions: Vec<FunctionBand>,
    /// Per component, draws whose aligned eigenfunction is closer (in
    /// absolute inner product) to another component's posterior mean.
    pub crossings: Vec<usize>,
    /// Draws with at least one clamped negative eigenvalue.
    pub clamped_draws: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub s_points: Vec<f64>,
    pub t_points: Vec<f64>,
    /// Vectorized mean surface band (`s` fastest).
    pub mean: FunctionBand,
    pub kernel: Option<KernelGrid>,
    pub marginal_s: AxisSummary,
    pub marginal_t: AxisSummary,
    pub n_draws: usize,
}

struct DrawSummary {
    mean: DVector<f64>,
    eig_s: EigenSummary,
    eig_t: EigenSummary,
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn axis_summary(
    axis: Axis,
    points: &[f64],
    mean_covariance: MarginalCovariance,
    eigs: &[&EigenSummary],
    alpha: f64,
) -> Result<AxisSummary> {
    let rank = eigs[0].eigenvalues.len();
    let n = eigs.len();
    let mut eigenfunctions = Vec::with_capacity(rank);
    let mut aligned_all = Vec::with_capacity(rank);
    let (mut ev_mean, mut ev_lo, mut ev_hi) = (DVector::zeros(rank), DVector::zeros(rank), DVector::zeros(rank));
    for k in 0..rank {
        let funcs: Vec<DVector<f64>> = eigs.iter().map(|e| e.eigenfunctions.column(k).into_owned()).collect();
        let aligned = align_signs(&funcs).aligned;
        eigenfunctions.push(band_from_rows(&aligned, alpha)?);
        aligned_all.push(aligned);
        let mut vals: Vec<f64> = eigs.iter().map(|e| e.eigenvalues[k]).collect();
        ev_mean[k] = vals.iter().sum::<f64>() / n as f64;
        vals.sort_by(f64::total_cmp);
        ev_lo[k] = quantile_sorted(&vals, alpha / 2.0);
        ev_hi[k] = quantile_sorted(&vals, 1.0 - alpha / 2.0);
    }
    let crossings = (0..rank)
        .map(|k| {
            (0..n)
                .filter(|&i| {
                    let own = aligned_all[k][i].dot(&eigenfunctions[k].center).abs();
                    (0..rank).any(|o| o != k && aligned_all[k][i].dot(&eigenfunctions[o].center).abs() > own)
                })
                .count()
        })
        .collect();
    Ok(AxisSummary {
        axis,
        points: points.to_vec(),
        mean_covariance: mean_covariance.matrix,
        eigenvalues: ev_mean,
        eigenvalue_lower: ev_lo,
        eigenvalue_upper: ev_hi,
        eigenfunctions,
        crossings,
        clamped_draws: eigs.iter().filter(|e| e.n_clamped > 0).count(),
    })
}

/// Per-draw mean surface and marginal eigendecompositions, then sign
/// alignment in draw order and simultaneous bands.
///
/// Marginals are computed directly from each draw's `Ω`; posterior mean
/// covariances use the posterior mean `Ω`, which is exact by linearity.
pub fn summarize(draws: &PosteriorDraws, options: &SummaryOptions) -> Result<PosteriorSummary> {
    if draws.is_empty() {
        return arg_err("no posterior draws to summarize");
    }
    if options.n_components == 0 || options.n_components > options.s_points.len().min(options.t_points.len()) {
        return arg_err("component count must be positive and no larger than either grid");
    }
    let b1 = build_basis(&draws.basis_s, &options.s_points)?;
    let b2 = build_basis(&draws.basis_t, &options.t_points)?;
    let per_draw: Vec<Result<(DrawSummary, DMatrix<f64>)>> = draws
        .draws
        .par_iter()
        .map(|d| {
            let om = d.omega();
            let mean = mean_surface(&d.state, &options.covariate, &b1, &b2)?;
            let (ks, kt) = marginals_from_omega(&om, &b1, &b2, options.quadrature)?;
            Ok((
                DrawSummary {
                    mean: DVector::from_column_slice(mean.as_slice()),
                    eig_s: eigen_decompose_with(&ks, options.n_components, options.quadrature)?,
                    eig_t: eigen_decompose_with(&kt, options.n_components, options.quadrature)?,
                },
                om,
            ))
        })
        .collect();
    let mut summaries = Vec::with_capacity(per_draw.len());
    let mut omega_mean: Option<DMatrix<f64>> = None;
    for r in per_draw {
        let (s, om) = r?;
        match &mut omega_mean {
            None => omega_mean = Some(om),
            Some(acc) => *acc += om,
        }
        summaries.push(s);
    }
    let n = summaries.len();
    let omega_mean = omega_mean.expect("nonempty") / n as f64;
    let (ks, kt) = marginals_from_omega(&omega_mean, &b1, &b2, options.quadrature)?;
    let kernel = if options.full_kernel {
        Some(kernel_from_omega(&omega_mean, &b1, &b2)?)
    } else {
        None
    };
    let means: Vec<DVector<f64>> = summaries.iter().map(|s| s.mean.clone()).collect();
    let eig_s: Vec<&EigenSummary> = summaries.iter().map(|s| &s.eig_s).collect();
    let eig_t: Vec<&EigenSummary> = summaries.iter().map(|s| &s.eig_t).collect();
    Ok(PosteriorSummary {
        s_points: options.s_points.clone(),
        t_points: options.t_points.clone(),
        mean: band_from_rows(&means, options.alpha)?,
        kernel,
        marginal_s: axis_summary(Axis::S, &options.s_points, ks, &eig_s, options.alpha)?,
        marginal_t: axis_summary(Axis::T, &options.t_points, kt, &eig_t, options.alpha)?,
        n_draws: n,
    })
}

/// Smallest eigenvalue relative to the largest absolute eigenvalue.
pub fn relative_min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let e = SymmetricEigen::new(symmetrize(m.clone())).eigenvalues;
    let scale = e.amax();
    if scale == 0.0 {
        0.0
    } else {
        e.min() / scale
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Hyperparameters, ModelState};
    use crate::random::stream;
    use crate::splines::BasisConfig;
    use approx::assert_abs_diff_eq;

    fn small_state(seed: u64) -> (ModelState, BasisMatrix, BasisMatrix) {
        let mut rng = stream(seed, 0);
        let hyper = Hyperparameters::with_ranks(2, 2);
        let cfg = BasisConfig::new(2, vec![], (0.0, 1.0)).unwrap();
        let b1 = build_basis(&cfg, &[0.1, 0.7]).unwrap();
        let b2 = build_basis(&cfg, &[0.0, 0.4, 1.0]).unwrap();
        let x = vec![DVector::from_vec(vec![1.0, -0.5])];
        (ModelState::sample_prior(&hyper, 3, 3, &x, &mut rng).unwrap(), b1, b2)
    }

    #[test]
    fn zero_omega_gives_zero_gram() {
        let (_, b1, b2) = small_state(1);
        let k = kernel_from_omega(&DMatrix::zeros(9, 9), &b1, &b2).unwrap();
        assert_eq!(k.gram.amax(), 0.0);
    }

    #[test]
    fn identity_omega_single_point_is_row_norm() {
        let cfg = BasisConfig::new(2, vec![], (0.0, 1.0)).unwrap();
        let b1 = build_basis(&cfg, &[0.3]).unwrap();
        let b2 = build_basis(&cfg, &[0.8]).unwrap();
        let k = kernel_from_omega(&DMatrix::identity(9, 9), &b1, &b2).unwrap();
        let row = crate::splines::tensor_row(&b1.row(0), &b2.row(0));
        assert_abs_diff_eq!(k.gram[(0, 0)], row.norm_squared(), epsilon = 1e-15);
    }

    #[test]
    fn kernel_matches_double_sum() {
        let (st, b1, b2) = small_state(3);
        let om = omega(&st);
        let k = covariance_kernel(&st, &b1, &b2).unwrap();
        for (j, k1, j2, k2) in [(0, 0, 1, 2), (1, 1, 1, 1), (0, 2, 0, 0)] {
            let mut acc = 0.0;
            for a in 0..9 {
                for b in 0..9 {
                    let (m, l) = (a % 3, a / 3);
                    let (m2, l2) = (b % 3, b / 3);
                    acc += b1.values[(j, m)] * b2.values[(k1, l)] * om[(a, b)] * b1.values[(j2, m2)] * b2.values[(k2, l2)];
                }
            }
            assert_abs_diff_eq!(k.at(j, k1, j2, k2), acc, epsilon = 1e-10 * (1.0 + acc.abs()));
        }
    }

    #[test]
    fn mean_surface_two_paths() {
        let (st, b1, b2) = small_state(4);
        let x = DVector::from_vec(vec![0.3, 2.0]);
        let direct = mean_surface(&st, &x, &b1, &b2).unwrap();
        let e = st.reg.tr_mul(&x);
        let eta = DMatrix::from_column_slice(2, 2, e.as_slice());
        let theta = &st.load_s * eta * st.load_t.transpose();
        let other = eval_surface(&theta, &b1, &b2).unwrap();
        assert!((direct - other).amax() < 1e-10);
        assert_eq!(mean_surface(&st, &DVector::zeros(2), &b1, &b2).unwrap().amax(), 0.0);
        assert!(mean_surface(&st, &DVector::zeros(3), &b1, &b2).is_err());
    }

    #[test]
    fn fast_marginals_match_kernel_path() {
        let (st, b1, b2) = small_state(5);
        let om = omega(&st);
        let k = kernel_from_omega(&om, &b1, &b2).unwrap();
        for quad in [Quadrature::Uniform, Quadrature::Trapezoid] {
            let (ks, kt) = marginals_from_omega(&om, &b1, &b2, quad).unwrap();
            let scale = k.gram.amax();
            assert!((ks.matrix - marginalize_with(&k, Axis::S, quad).matrix).amax() < 1e-12 * scale);
            assert!((kt.matrix - marginalize_with(&k, Axis::T, quad).matrix).amax() < 1e-12 * scale);
        }
    }

    #[test]
    fn separable_kernel_marginal() {
        let ks0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let kt0 = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.1, 0.2, 3.0, 0.3, 0.1, 0.3, 2.0]);
        let gram = kt0.kronecker(&ks0);
        let k = KernelGrid {
            s_points: vec![0.0, 1.0],
            t_points: vec![0.0, 0.5, 1.0],
            gram,
        };
        let m = marginalize(&k, Axis::S);
        assert!((m.matrix - &ks0 * 2.0).amax() < 1e-12);
        let m = marginalize(&k, Axis::T);
        assert!((m.matrix - &kt0 * 1.5).amax() < 1e-12);
    }

    #[test]
    fn marginal_of_constant_and_single_slice() {
        let k = KernelGrid {
            s_points: vec![0.0, 1.0],
            t_points: vec![0.2],
            gram: DMatrix::from_element(2, 2, 0.7),
        };
        assert!(marginalize(&k, Axis::S).matrix.iter().all(|v| (v - 0.7).abs() < 1e-15));
        assert_eq!(marginalize(&k, Axis::S).matrix, k.gram);
    }

    fn marg(m: DMatrix<f64>, points: Vec<f64>) -> MarginalCovariance {
        MarginalCovariance {
            axis: Axis::S,
            points,
            matrix: m,
        }
    }

    #[test]
    fn eigen_of_diagonal() {
        let e = eigen_decompose(&marg(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0])), vec![0.0, 1.0]), 2).unwrap();
        assert_abs_diff_eq!(e.eigenvalues[0], 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e.eigenvalues[1], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e.eigenfunctions[(1, 0)].abs(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e.eigenfunctions[(0, 1)].abs(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn eigen_of_rank_one() {
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let e = eigen_decompose(&marg(&v * v.transpose(), vec![0.0, 0.5, 1.0]), 1).unwrap();
        // Grid spacing 0.5 scales the operator.
        assert_abs_diff_eq!(e.eigenvalues[0], 0.5 * v.norm_squared(), epsilon = 1e-12);
        assert_abs_diff_eq!(e.fve[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn asymmetric_input_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(eigen_decompose(&marg(m, vec![0.0, 1.0]), 1).is_err());
    }

    #[test]
    fn negative_eigenvalues_clamped() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, -1e-9]));
        let e = eigen_decompose(&marg(m, vec![0.0, 1.0]), 2).unwrap();
        assert_eq!(e.n_clamped, 1);
        assert_eq!(e.eigenvalues[1], 0.0);
        assert!(e.most_negative < 0.0);
    }

    #[test]
    fn alternating_signs_are_removed() {
        let u = DVector::from_vec(vec![0.3, -1.0, 0.7]);
        let seq: Vec<_> = (0..6).map(|i| if i % 2 == 0 { u.clone() } else { -&u }).collect();
        let out = align_signs(&seq);
        assert!(out.aligned.iter().all(|a| *a == u));
        assert_eq!(out.flipped, vec![false, true, false, true, false, true]);
        let again = align_signs(&out.aligned);
        assert!(again.flipped.iter().all(|f| !f));
    }

    #[test]
    fn identical_draws_collapse_band() {
        let m = DMatrix::from_fn(5, 3, |_, u| u as f64 + 1.0);
        let b = simultaneous_band(&m, 0.1).unwrap();
        assert_eq!(b.lower, b.center);
        assert_eq!(b.upper, b.center);
        assert!(simultaneous_band(&m.rows(0, 1).into_owned(), 0.1).is_err());
    }
}
