//! Gamma draws restricted to an upper tail `(lower, ∞)` by inversion.
//!
//! A uniform variate is mapped onto the upper-tail probability
//! `Q(shape, rate·x)` and the quantile is recovered by safeguarded Newton
//! iterations on `ln Q`, which stay accurate deep in the tail. When the tail
//! mass is below `1e-300` the draw falls back to rejection from a shifted
//! exponential anchored at the boundary.

use rand::Rng;

use crate::random::{gamma, open_unit};
use crate::special::ln_gamma_q;
use statrs::function::gamma::ln_gamma;

/// `ln(1e-300)`: below this tail mass the inverse-CDF route is abandoned.
const LN_MIN_TAIL: f64 = -690.775_527_898_213_7;
const MAX_NEWTON: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedGamma {
    pub shape: f64,
    pub rate: f64,
    pub lower: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedDraw {
    pub value: f64,
    /// The rejection fallback was used because the tail mass underflowed.
    pub fallback: bool,
}

impl TruncatedGamma {
    pub fn new(shape: f64, rate: f64, lower: f64) -> Self {
        assert!(shape > 0.0 && rate > 0.0, "gamma shape and rate must be positive");
        Self { shape, rate, lower }
    }

    pub fn untruncated(shape: f64, rate: f64) -> Self {
        Self::new(shape, rate, f64::NEG_INFINITY)
    }

    /// `ln P(X > lower)` for the untruncated gamma.
    pub fn ln_tail_mass(&self) -> f64 {
        ln_gamma_q(self.shape, self.rate * self.lower.max(0.0))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TruncatedDraw {
        let y_low = self.rate * self.lower.max(0.0);
        let ln_tail = ln_gamma_q(self.shape, y_low);
        if ln_tail < LN_MIN_TAIL {
            return TruncatedDraw {
                value: self.rejection(rng),
                fallback: true,
            };
        }
        let target = open_unit(rng).ln() + ln_tail;
        let y = invert_ln_q(self.shape, target, y_low);
        // Floating-point rounding can land exactly on the boundary.
        let value = (y / self.rate).max(next_up(self.lower.max(0.0)));
        TruncatedDraw { value, fallback: false }
    }

    /// Exponential-proposal rejection on `(lower, ∞)`.
    fn rejection<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (a, b, l) = (self.shape, self.rate, self.lower);
        if l <= 0.0 {
            return gamma(rng, a, b);
        }
        let lambda = if a > 1.0 { b - (a - 1.0) / l } else { b };
        let lambda = lambda.max(b * 1e-3);
        loop {
            let x = l - open_unit(rng).ln() / lambda;
            // Target over proposal, normalized to 1 at the boundary.
            let ln_accept = (a - 1.0) * (x / l).ln() - (b - lambda) * (x - l);
            if open_unit(rng).ln() <= ln_accept.min(0.0) {
                return x;
            }
        }
    }
}

fn next_up(x: f64) -> f64 {
    if x == 0.0 {
        f64::MIN_POSITIVE
    } else {
        f64::from_bits(x.to_bits() + 1)
    }
}

/// Solve `ln Q(a, y) = target` for `y >= y_low`.
fn invert_ln_q(a: f64, target: f64, y_low: f64) -> f64 {
    let g = |y: f64| ln_gamma_q(a, y) - target;
    let ln_gamma_a = ln_gamma(a);
    let mut lo = y_low;
    let mut hi = (y_low.max(a) + 1.0) * 2.0;
    while g(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    let mut y = 0.5 * (lo + hi);
    for _ in 0..MAX_NEWTON {
        let gy = g(y);
        if gy > 0.0 {
            lo = y;
        } else {
            hi = y;
        }
        // d/dy ln Q = -y^{a-1} e^{-y} / (Γ(a) Q)
        let slope = -((a - 1.0) * y.ln() - y - ln_gamma_a - ln_gamma_q(a, y)).exp();
        let mut next = y - gy / slope;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - y).abs() <= 1e-14 * y.abs().max(1e-300) || hi - lo <= 1e-15 * hi {
            return next;
        }
        y = next;
    }
    y
}

/// Convenience wrapper returning only the value.
pub fn sample_truncated_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, lower: f64, rng: &mut R) -> f64 {
    TruncatedGamma::new(shape, rate, lower).sample(rng).value
}
