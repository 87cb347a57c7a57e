//! Clamped B-spline bases on a closed interval and their tensor products.
//!
//! Coefficient matrices are vectorized column-major throughout the crate:
//! entry `(m, l)` of a `p1 x p2` matrix lives at `m + p1 * l`. Under that
//! convention `vec(A X B^T) = (B ⊗ A) vec(X)` and the evaluation row for the
//! point `(s, t)` is `B2(t) ⊗ B1(s)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};

/// Column-major position of entry `(row, col)` in a matrix with `rows` rows.
#[inline]
pub fn vec_index(row: usize, col: usize, rows: usize) -> usize {
    row + rows * col
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisConfig {
    pub degree: usize,
    pub interior_knots: Vec<f64>,
    pub domain: (f64, f64),
}

impl BasisConfig {
    pub fn new(degree: usize, interior_knots: Vec<f64>, domain: (f64, f64)) -> Result<Self> {
        let cfg = Self {
            degree,
            interior_knots,
            domain,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cubic basis on `[lo, hi]` with `n_interior` equally spaced interior knots.
    pub fn uniform_cubic(n_interior: usize, domain: (f64, f64)) -> Result<Self> {
        let (lo, hi) = domain;
        let knots = (1..=n_interior)
            .map(|k| lo + (hi - lo) * k as f64 / (n_interior + 1) as f64)
            .collect();
        Self::new(3, knots, domain)
    }

    /// Cubic basis on `[lo, hi]` with exactly `dim` basis functions.
    pub fn cubic_with_dim(dim: usize, domain: (f64, f64)) -> Result<Self> {
        if dim < 4 {
            return arg_err(format!("a cubic basis needs at least 4 functions, got {dim}"));
        }
        Self::uniform_cubic(dim - 4, domain)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.domain;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return arg_err(format!("basis domain [{lo}, {hi}] is not a proper interval"));
        }
        for w in self.interior_knots.windows(2) {
            if w[1] < w[0] {
                return arg_err("interior knots must be nondecreasing");
            }
        }
        for &k in &self.interior_knots {
            if !(k > lo && k < hi) {
                return Err(Error::Domain(format!(
                    "interior knot {k} outside the open domain ({lo}, {hi})"
                )));
            }
        }
        // A knot repeated more than degree+1 times leaves an identically zero function.
        let mut run = 1;
        for w in self.interior_knots.windows(2) {
            run = if w[1] == w[0] { run + 1 } else { 1 };
            if run > self.degree + 1 {
                return arg_err("interior knot multiplicity exceeds degree + 1");
            }
        }
        Ok(())
    }

    /// Number of basis functions.
    pub fn dim(&self) -> usize {
        self.interior_knots.len() + self.degree + 1
    }

    /// Full clamped knot vector (boundary multiplicity `degree + 1`).
    pub fn knot_vector(&self) -> Vec<f64> {
        let (lo, hi) = self.domain;
        let mut knots = Vec::with_capacity(self.dim() + self.degree + 1);
        knots.extend(std::iter::repeat_n(lo, self.degree + 1));
        knots.extend_from_slice(&self.interior_knots);
        knots.extend(std::iter::repeat_n(hi, self.degree + 1));
        knots
    }

    /// Values of every basis function at `x`.
    pub fn eval_point(&self, x: f64) -> Result<DVector<f64>> {
        let knots = self.knot_vector();
        let mut row = DVector::zeros(self.dim());
        self.eval_into(&knots, x, row.as_mut_slice())?;
        Ok(row)
    }

    fn eval_into(&self, knots: &[f64], x: f64, out: &mut [f64]) -> Result<()> {
        let (lo, hi) = self.domain;
        if !(x >= lo && x <= hi) {
            return Err(Error::Domain(format!("point {x} outside [{lo}, {hi}]")));
        }
        let deg = self.degree;
        let p = self.dim();
        // Last nondegenerate interval containing x; x == hi falls into the final one.
        let mut span = deg;
        for i in deg..p {
            if knots[i] <= x && knots[i] < knots[i + 1] {
                span = i;
            }
            if knots[i] > x {
                break;
            }
        }
        let mut n = vec![0.0; deg + 1];
        let mut left = vec![0.0; deg + 1];
        let mut right = vec![0.0; deg + 1];
        n[0] = 1.0;
        for j in 1..=deg {
            left[j] = x - knots[span + 1 - j];
            right[j] = knots[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom > 0.0 { n[r] / denom } else { 0.0 };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        for (r, &v) in n.iter().enumerate() {
            out[span - deg + r] = v;
        }
        Ok(())
    }
}

/// Basis functions (columns) evaluated at a list of points (rows).
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    pub points: Vec<f64>,
    pub values: DMatrix<f64>,
}

impl BasisMatrix {
    pub fn n_points(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, j: usize) -> DVector<f64> {
        self.values.row(j).transpose()
    }
}

pub fn build_basis(config: &BasisConfig, points: &[f64]) -> Result<BasisMatrix> {
    config.validate()?;
    if points.is_empty() {
        return arg_err("no evaluation points");
    }
    let knots = config.knot_vector();
    let p = config.dim();
    let mut values = DMatrix::zeros(points.len(), p);
    let mut row = vec![0.0; p];
    for (j, &x) in points.iter().enumerate() {
        config.eval_into(&knots, x, &mut row)?;
        for (m, &v) in row.iter().enumerate() {
            values[(j, m)] = v;
        }
    }
    Ok(BasisMatrix {
        points: points.to_vec(),
        values,
    })
}

/// Tensor evaluation row `b2 ⊗ b1`, ordered like `vec(Θ)`.
pub fn tensor_row(b1_row: &DVector<f64>, b2_row: &DVector<f64>) -> DVector<f64> {
    b2_row.kronecker(b1_row)
}

/// Surface `B1 Θ B2^T`, i.e. entry `(j, k)` is `B1(s_j)^T Θ B2(t_k)`.
pub fn eval_surface(theta: &DMatrix<f64>, b1: &BasisMatrix, b2: &BasisMatrix) -> Result<DMatrix<f64>> {
    if theta.nrows() != b1.dim() || theta.ncols() != b2.dim() {
        return arg_err(format!(
            "coefficient matrix is {}x{}, bases have dimensions {} and {}",
            theta.nrows(),
            theta.ncols(),
            b1.dim(),
            b2.dim()
        ));
    }
    Ok(&b1.values * theta * b2.values.transpose())
}

/// Design matrix for a grid stacked with `s` varying fastest: `B2 ⊗ B1`.
pub fn tensor_design(b1: &BasisMatrix, b2: &BasisMatrix) -> DMatrix<f64> {
    b2.values.kronecker(&b1.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn degree_zero_is_an_indicator() {
        let cfg = BasisConfig::new(0, vec![0.5], (0.0, 1.0)).unwrap();
        let b = build_basis(&cfg, &[0.25, 0.75, 1.0]).unwrap();
        assert_eq!(b.row(0).as_slice(), &[1.0, 0.0]);
        assert_eq!(b.row(1).as_slice(), &[0.0, 1.0]);
        assert_eq!(b.row(2).as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn fit_configuration_dimensions() {
        let t = BasisConfig::new(
            3,
            vec![1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0, 4.0 / 6.0, 5.0 / 6.0, 5.0 / 6.0],
            (0.0, 1.0),
        )
        .unwrap();
        assert_eq!(t.dim(), 10);
        let s = BasisConfig::new(3, vec![0.2, 0.4, 0.6, 0.8], (0.0, 1.0)).unwrap();
        assert_eq!(s.dim(), 8);
    }

    #[test]
    fn repeated_knot_keeps_partition_of_unity() {
        let cfg = BasisConfig::new(3, vec![0.3, 0.6, 0.6], (0.0, 1.0)).unwrap();
        for k in 0..=100 {
            let row = cfg.eval_point(k as f64 / 100.0).unwrap();
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn endpoints_hit_boundary_functions() {
        let cfg = BasisConfig::uniform_cubic(3, (0.0, 2.0)).unwrap();
        let first = cfg.eval_point(0.0).unwrap();
        let last = cfg.eval_point(2.0).unwrap();
        assert_abs_diff_eq!(first[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(last[cfg.dim() - 1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = BasisConfig::uniform_cubic(2, (0.0, 1.0)).unwrap();
        assert!(matches!(build_basis(&cfg, &[1.5]), Err(Error::Domain(_))));
        assert!(matches!(build_basis(&cfg, &[]), Err(Error::Argument(_))));
        assert!(BasisConfig::new(2, vec![0.0], (0.0, 1.0)).is_err());
        assert!(BasisConfig::new(2, vec![0.6, 0.4], (0.0, 1.0)).is_err());
        assert!(BasisConfig::new(2, vec![], (1.0, 1.0)).is_err());
    }

    #[test]
    fn tensor_row_single_nonzero() {
        let b1 = DVector::from_vec(vec![1.0, 0.0]);
        let b2 = DVector::from_vec(vec![0.0, 1.0]);
        let row = tensor_row(&b1, &b2);
        assert_eq!(row.iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(row[vec_index(0, 1, 2)], 1.0);
    }

    #[test]
    fn tensor_row_is_column_major_outer_product() {
        let b1 = DVector::from_vec(vec![0.3, -1.2, 2.5]);
        let b2 = DVector::from_vec(vec![0.7, 0.1, -0.4, 1.9]);
        let row = tensor_row(&b1, &b2);
        let outer = &b1 * b2.transpose();
        for m in 0..3 {
            for l in 0..4 {
                assert_eq!(row[vec_index(m, l, 3)], outer[(m, l)]);
            }
        }
    }

    #[test]
    fn single_coefficient_surface() {
        let c1 = BasisConfig::uniform_cubic(2, (0.0, 1.0)).unwrap();
        let c2 = BasisConfig::uniform_cubic(1, (0.0, 1.0)).unwrap();
        let pts = [0.0, 0.21, 0.5, 0.93, 1.0];
        let b1 = build_basis(&c1, &pts).unwrap();
        let b2 = build_basis(&c2, &pts[1..]).unwrap();
        let mut theta = DMatrix::zeros(c1.dim(), c2.dim());
        assert_eq!(eval_surface(&theta, &b1, &b2).unwrap().abs().max(), 0.0);
        theta[(2, 3)] = 1.0;
        let f = eval_surface(&theta, &b1, &b2).unwrap();
        for j in 0..b1.n_points() {
            for k in 0..b2.n_points() {
                assert_abs_diff_eq!(f[(j, k)], b1.values[(j, 2)] * b2.values[(k, 3)], epsilon = 1e-15);
            }
        }
        assert!(eval_surface(&theta.transpose(), &b1, &b2).is_err());
    }
}
