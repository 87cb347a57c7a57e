use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};

/// Fixed prior constants and latent ranks.
///
/// Gamma pairs are `(shape, rate)` for the precisions `1/σ_j`, `1/h_j` and
/// `1/φ²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub q_s: usize,
    pub q_t: usize,
    pub nu_s: f64,
    pub nu_t: f64,
    /// Hyperprior shape for the first multiplicative factor of each axis.
    pub r_first: f64,
    /// Hyperprior shape for the remaining (truncated) factors.
    pub r_rest: f64,
    pub a_coef: f64,
    pub b_coef: f64,
    pub a_score: f64,
    pub b_score: f64,
    pub a_noise: f64,
    pub b_noise: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            q_s: 6,
            q_t: 6,
            nu_s: 5.0,
            nu_t: 5.0,
            r_first: 1.0,
            r_rest: 2.0,
            a_coef: 0.5,
            b_coef: 0.5,
            a_score: 1.0,
            b_score: 1.0,
            a_noise: 1e-4,
            b_noise: 1e-4,
        }
    }
}

impl Hyperparameters {
    pub fn with_ranks(q_s: usize, q_t: usize) -> Self {
        Self {
            q_s,
            q_t,
            ..Self::default()
        }
    }

    pub fn validate(&self, p1: usize, p2: usize) -> Result<()> {
        if self.q_s == 0 || self.q_t == 0 {
            return arg_err("latent ranks must be positive");
        }
        if self.q_s > p1 || self.q_t > p2 {
            return arg_err(format!(
                "latent ranks ({}, {}) exceed basis dimensions ({p1}, {p2})",
                self.q_s, self.q_t
            ));
        }
        let positive = [
            self.nu_s,
            self.nu_t,
            self.r_first,
            self.r_rest,
            self.a_coef,
            self.b_coef,
            self.a_score,
            self.b_score,
            self.a_noise,
            self.b_noise,
        ];
        if positive.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return arg_err("all prior constants must be finite and strictly positive");
        }
        Ok(())
    }
}
