use nalgebra::{DMatrix, DVector};

use crate::error::{arg_err, Result};

/// One subject's surface on the shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub id: String,
    /// `n_s x n_t` responses; unobserved cells hold an arbitrary finite value.
    pub y: DMatrix<f64>,
    /// `true` where the cell was observed.
    pub mask: DMatrix<bool>,
    /// Time-stable covariates.
    pub x: DVector<f64>,
}

impl SubjectRecord {
    pub fn complete(id: impl Into<String>, y: DMatrix<f64>, x: DVector<f64>) -> Self {
        let mask = DMatrix::from_element(y.nrows(), y.ncols(), true);
        Self {
            id: id.into(),
            y,
            mask,
            x,
        }
    }

    pub fn n_observed(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset {
    pub subjects: Vec<SubjectRecord>,
    pub s_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    /// Covariate dimension.
    pub d: usize,
}

impl FunctionalDataset {
    pub fn new(subjects: Vec<SubjectRecord>, s_grid: Vec<f64>, t_grid: Vec<f64>, d: usize) -> Result<Self> {
        let ds = Self {
            subjects,
            s_grid,
            t_grid,
            d,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, grid) in [("s", &self.s_grid), ("t", &self.t_grid)] {
            if grid.is_empty() {
                return arg_err(format!("empty {name} grid"));
            }
            if grid.iter().any(|v| !v.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
                return arg_err(format!("{name} grid must be finite and strictly increasing"));
            }
        }
        let shape = (self.s_grid.len(), self.t_grid.len());
        for subj in &self.subjects {
            if subj.y.shape() != shape || subj.mask.shape() != shape {
                return arg_err(format!(
                    "subject {}: observation shape {:?} does not match grid {:?}",
                    subj.id,
                    subj.y.shape(),
                    shape
                ));
            }
            if subj.x.len() != self.d {
                return arg_err(format!(
                    "subject {}: {} covariates, expected {}",
                    subj.id,
                    subj.x.len(),
                    self.d
                ));
            }
            if subj.x.iter().any(|v| !v.is_finite()) {
                return arg_err(format!("subject {}: non-finite covariate", subj.id));
            }
            if subj.y.iter().zip(subj.mask.iter()).any(|(v, &m)| m && !v.is_finite()) {
                return arg_err(format!("subject {}: non-finite observed value", subj.id));
            }
        }
        Ok(())
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_observed(&self) -> usize {
        self.subjects.iter().map(SubjectRecord::n_observed).sum()
    }

    pub fn is_complete(&self) -> bool {
        self.subjects.iter().all(SubjectRecord::is_complete)
    }

    /// Component-wise mean covariate vector (zeros when there are no subjects).
    pub fn mean_covariate(&self) -> DVector<f64> {
        let mut acc = DVector::zeros(self.d);
        for s in &self.subjects {
            acc += &s.x;
        }
        if !self.subjects.is_empty() {
            acc /= self.subjects.len() as f64;
        }
        acc
    }
}
