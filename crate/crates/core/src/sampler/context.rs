use nalgebra::{DMatrix, DVector};

use crate::error::{arg_err, Result};
use crate::model::FunctionalDataset;
use crate::splines::BasisMatrix;

/// Data-dependent quantities that stay fixed over a chain.
///
/// Subjects sharing a missingness pattern share the basis cross-product
/// `D_obsᵀ D_obs`; for complete grids it is `(B2ᵀB2) ⊗ (B1ᵀB1)`.
#[derive(Debug, Clone)]
pub struct SamplerContext<'a> {
    pub data: &'a FunctionalDataset,
    pub b1: &'a BasisMatrix,
    pub b2: &'a BasisMatrix,
    pub(crate) group_gram: Vec<DMatrix<f64>>,
    pub(crate) group_of: Vec<usize>,
    /// `D_obsᵀ y_obs` per subject.
    pub(crate) dty: Vec<DVector<f64>>,
    /// Covariates stacked by row (`n x d`).
    pub(crate) covariates: DMatrix<f64>,
    pub(crate) xtx: DMatrix<f64>,
    pub(crate) n_observed: usize,
}

impl<'a> SamplerContext<'a> {
    pub fn new(data: &'a FunctionalDataset, b1: &'a BasisMatrix, b2: &'a BasisMatrix) -> Result<Self> {
        data.validate()?;
        if b1.n_points() != data.s_grid.len() || b2.n_points() != data.t_grid.len() {
            return arg_err("bases must be evaluated on the dataset grids");
        }
        let (p1, p2) = (b1.dim(), b2.dim());
        let p = p1 * p2;
        let mut masks: Vec<&DMatrix<bool>> = Vec::new();
        let mut group_gram = Vec::new();
        let mut group_of = Vec::with_capacity(data.n_subjects());
        let mut dty = Vec::with_capacity(data.n_subjects());
        for subj in &data.subjects {
            let g = match masks.iter().position(|m| **m == subj.mask) {
                Some(g) => g,
                None => {
                    masks.push(&subj.mask);
                    group_gram.push(observed_gram(&subj.mask, b1, b2));
                    masks.len() - 1
                }
            };
            group_of.push(g);
            let masked = DMatrix::from_fn(subj.y.nrows(), subj.y.ncols(), |j, k| {
                if subj.mask[(j, k)] {
                    subj.y[(j, k)]
                } else {
                    0.0
                }
            });
            let proj = b1.values.tr_mul(&masked) * &b2.values;
            dty.push(DVector::from_column_slice(proj.as_slice()));
            debug_assert_eq!(dty.last().unwrap().len(), p);
        }
        let covariates = DMatrix::from_fn(data.n_subjects(), data.d, |i, j| data.subjects[i].x[j]);
        let xtx = covariates.tr_mul(&covariates);
        Ok(Self {
            data,
            b1,
            b2,
            group_gram,
            group_of,
            dty,
            covariates,
            xtx,
            n_observed: data.n_observed(),
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.data.n_subjects()
    }

    pub fn n_groups(&self) -> usize {
        self.group_gram.len()
    }
}

fn observed_gram(mask: &DMatrix<bool>, b1: &BasisMatrix, b2: &BasisMatrix) -> DMatrix<f64> {
    if mask.iter().all(|&m| m) {
        let g1 = b1.values.tr_mul(&b1.values);
        let g2 = b2.values.tr_mul(&b2.values);
        return g2.kronecker(&g1);
    }
    let p = b1.dim() * b2.dim();
    let mut gram = DMatrix::zeros(p, p);
    for k in 0..mask.ncols() {
        for j in 0..mask.nrows() {
            if mask[(j, k)] {
                let row = b2.row(k).kronecker(&b1.row(j));
                gram.ger(1.0, &row, &row, 1.0);
            }
        }
    }
    gram
}
