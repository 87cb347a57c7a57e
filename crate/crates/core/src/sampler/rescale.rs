//! Column rescaling moves along the scale ridge of the factor model.
//!
//! Multiplying a loading column by `c` and the matching rows (or columns) of
//! every score matrix and of `β` by `1/c` leaves every `Θ_i` mean unchanged,
//! so only prior terms move. The Gibbs blocks cross this ridge very slowly;
//! these Metropolis–Hastings moves cross it directly.
//!
//! With `u = ln c`, the log target is
//! `J u − A e^{2u} / 2 − B e^{−2u} / 2`, which is concave. Proposals are drawn
//! independently from a Student-t centred on its mode with the curvature of
//! the mode as scale.

use rand::Rng;
use rand_distr::{Distribution, StudentT};

use super::context::SamplerContext;
use crate::model::ModelState;
use crate::Axis;

const PROPOSAL_DF: f64 = 4.0;

/// Coefficients `(J, A, B)` of the log target of `u = ln c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgeTarget {
    pub jacobian: f64,
    pub loading: f64,
    pub inverse: f64,
}

impl RidgeTarget {
    pub fn ln_density(&self, u: f64) -> f64 {
        self.jacobian * u - 0.5 * self.loading * (2.0 * u).exp() - 0.5 * self.inverse * (-2.0 * u).exp()
    }

    pub fn mode(&self) -> f64 {
        let (j, a, b) = (self.jacobian, self.loading, self.inverse);
        // a g² − j g − b = 0 in g = e^{2u}; the root is written to avoid cancellation.
        let disc = (j * j + 4.0 * a * b).sqrt();
        let g = if j >= 0.0 { (j + disc) / (2.0 * a) } else { 2.0 * b / (disc - j) };
        0.5 * g.ln()
    }

    fn curvature(&self, u: f64) -> f64 {
        2.0 * self.loading * (2.0 * u).exp() + 2.0 * self.inverse * (-2.0 * u).exp()
    }

    fn usable(&self) -> bool {
        self.loading > 0.0 && self.inverse > 0.0 && self.loading.is_finite() && self.inverse.is_finite()
    }
}

fn student_ln_kernel(z: f64) -> f64 {
    -0.5 * (PROPOSAL_DF + 1.0) * (z * z / PROPOSAL_DF).ln_1p()
}

/// Log target of rescaling column `col` of the loadings for `axis`.
pub fn ridge_target(state: &ModelState, ctx: &SamplerContext, axis: Axis, col: usize) -> RidgeTarget {
    let d = state.dims();
    let (loadings, shrink, partner) = match axis {
        Axis::S => (&state.load_s, &state.shrink_s, d.q2),
        Axis::T => (&state.load_t, &state.shrink_t, d.q1),
    };
    let loading: f64 = (0..loadings.nrows())
        .map(|m| shrink.precision(m, col) * loadings[(m, col)].powi(2))
        .sum();
    // Score-vector indices touched by the move.
    let idx: Vec<usize> = (0..partner)
        .map(|o| match axis {
            Axis::S => col + d.q1 * o,
            Axis::T => o + d.q1 * col,
        })
        .collect();
    let mut inverse = 0.0;
    for (eta, subj) in state.scores.iter().zip(&ctx.data.subjects) {
        let mean = state.score_mean(&subj.x);
        for &l in &idx {
            inverse += (eta[l] - mean[l]).powi(2) / state.score_var[l];
        }
    }
    for &l in &idx {
        for j in 0..d.d {
            inverse += state.reg[(j, l)].powi(2) / state.reg_var[(j, l)];
        }
    }
    let touched = (d.n + d.d) * partner;
    RidgeTarget {
        jacobian: loadings.nrows() as f64 - touched as f64,
        loading,
        inverse,
    }
}

/// Apply the move `c = e^u` to column `col` of `axis`.
pub fn apply_rescale(state: &mut ModelState, axis: Axis, col: usize, u: f64) {
    let c = u.exp();
    let d = state.dims();
    match axis {
        Axis::S => {
            state.load_s.column_mut(col).scale_mut(c);
            for eta in &mut state.scores {
                eta.row_mut(col).unscale_mut(c);
            }
            for o in 0..d.q2 {
                state.reg.column_mut(col + d.q1 * o).unscale_mut(c);
            }
        }
        Axis::T => {
            state.load_t.column_mut(col).scale_mut(c);
            for eta in &mut state.scores {
                eta.column_mut(col).unscale_mut(c);
            }
            for o in 0..d.q1 {
                state.reg.column_mut(o + d.q1 * col).unscale_mut(c);
            }
        }
    }
}

/// One independence Metropolis–Hastings move per loading column on both
/// axes. Returns the number of accepted moves.
pub fn rescale_columns<R: Rng + ?Sized>(state: &mut ModelState, ctx: &SamplerContext, rng: &mut R) -> usize {
    let d = state.dims();
    let t = StudentT::new(PROPOSAL_DF).expect("positive degrees of freedom");
    let mut accepted = 0;
    for (axis, q) in [(Axis::S, d.q1), (Axis::T, d.q2)] {
        for col in 0..q {
            let target = ridge_target(state, ctx, axis, col);
            if !target.usable() {
                continue;
            }
            let centre = target.mode();
            let scale = 1.0 / target.curvature(centre).sqrt();
            let u_new = centre + scale * t.sample(rng);
            let ln_ratio = target.ln_density(u_new) - target.ln_density(0.0)
                + student_ln_kernel(-centre / scale)
                - student_ln_kernel((u_new - centre) / scale);
            if crate::random::open_unit(rng).ln() < ln_ratio {
                apply_rescale(state, axis, col, u_new);
                accepted += 1;
            }
        }
    }
    accepted
}
