//! Random-walk Metropolis–Hastings on the log scale for the four shrinkage
//! hyperparameters.

use rand::Rng;

use crate::model::{AxisShrinkage, Hyperparameters, ModelState};
use crate::random::{open_unit, std_normal};
use crate::special::{ln_gamma_pdf, ln_gamma_q};

/// Parameter order used by step sizes and acceptance flags.
pub const MH_PARAMETERS: [&str; 4] = ["a_s_first", "a_s_rest", "a_t_first", "a_t_rest"];

/// Log conditional of the first-factor shape: `Ga(r,1)` hyperprior times `Ga(δ_1; a, 1)`.
pub fn ln_target_first(a: f64, r: f64, delta_first: f64) -> f64 {
    if a <= 0.0 {
        return f64::NEG_INFINITY;
    }
    ln_gamma_pdf(a, r, 1.0) + ln_gamma_pdf(delta_first, a, 1.0)
}

/// Log conditional of the shared shape of the truncated factors, including
/// the `1 / Q(a, 1)` normalizer of each truncated density.
pub fn ln_target_rest(a: f64, r: f64, deltas_rest: &[f64]) -> f64 {
    if a <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let tail = ln_gamma_q(a, 1.0);
    ln_gamma_pdf(a, r, 1.0) + deltas_rest.iter().map(|&d| ln_gamma_pdf(d, a, 1.0) - tail).sum::<f64>()
}

/// One log-scale random-walk step. The `ln a' - ln a` term is the Jacobian of
/// the log transform.
pub fn mh_step<R: Rng + ?Sized>(current: f64, step_sd: f64, target: impl Fn(f64) -> f64, rng: &mut R) -> (f64, bool) {
    let proposal = current * (step_sd * std_normal(rng)).exp();
    let ln_ratio = target(proposal) - target(current) + proposal.ln() - current.ln();
    if open_unit(rng).ln() < ln_ratio {
        (proposal, true)
    } else {
        (current, false)
    }
}

fn update_axis<R: Rng + ?Sized>(sh: &mut AxisShrinkage, hyper: &Hyperparameters, sd: [f64; 2], rng: &mut R) -> [bool; 2] {
    let d0 = sh.delta[0];
    let (a1, acc1) = mh_step(sh.a_first, sd[0], |a| ln_target_first(a, hyper.r_first, d0), rng);
    sh.a_first = a1;
    let rest: Vec<f64> = sh.delta.iter().skip(1).copied().collect();
    let (a2, acc2) = mh_step(sh.a_rest, sd[1], |a| ln_target_rest(a, hyper.r_rest, &rest), rng);
    sh.a_rest = a2;
    [acc1, acc2]
}

/// Update all four shape hyperparameters; returns acceptance flags in
/// [`MH_PARAMETERS`] order.
pub fn mh_update_a<R: Rng + ?Sized>(state: &mut ModelState, hyper: &Hyperparameters, step_sd: &[f64; 4], rng: &mut R) -> [bool; 4] {
    let [s1, s2] = update_axis(&mut state.shrink_s, hyper, [step_sd[0], step_sd[1]], rng);
    let [t1, t2] = update_axis(&mut state.shrink_t, hyper, [step_sd[2], step_sd[3]], rng);
    [s1, s2, t1, t2]
}

/// Burn-in-only step adaptation toward a target acceptance rate.
#[derive(Debug, Clone)]
pub struct StepAdapter {
    pub step_sd: [f64; 4],
    target: f64,
    window: usize,
    accepted: [usize; 4],
    seen: usize,
    batches: usize,
}

impl StepAdapter {
    pub const TARGET_ACCEPTANCE: f64 = 0.44;
    pub const WINDOW: usize = 50;

    pub fn new(initial_sd: f64) -> Self {
        Self {
            step_sd: [initial_sd; 4],
            target: Self::TARGET_ACCEPTANCE,
            window: Self::WINDOW,
            accepted: [0; 4],
            seen: 0,
            batches: 0,
        }
    }

    pub fn record(&mut self, flags: &[bool; 4]) {
        for (a, &f) in self.accepted.iter_mut().zip(flags) {
            *a += usize::from(f);
        }
        self.seen += 1;
        if self.seen == self.window {
            self.batches += 1;
            let gain = (1.0 / (self.batches as f64).sqrt()).min(0.1);
            for (sd, &acc) in self.step_sd.iter_mut().zip(&self.accepted) {
                let rate = acc as f64 / self.window as f64;
                let dir = if rate > self.target { 1.0 } else { -1.0 };
                *sd = (*sd * (dir * gain).exp()).clamp(1e-3, 10.0);
            }
            self.accepted = [0; 4];
            self.seen = 0;
        }
    }
}
