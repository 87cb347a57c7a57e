//! Joint-distribution test of the sampler by comparing two simulators of
//! `p(parameters, data)`: independent prior draws, and Gibbs sweeps that
//! alternate with re-simulation of the data.

use nalgebra::DMatrix;
use rand::Rng;

use super::chain::sweep;
use super::context::SamplerContext;
use crate::error::{arg_err, Result};
use crate::model::{FunctionalDataset, Hyperparameters, ModelState};
use crate::random::{std_normal, stream};
use crate::splines::{eval_surface, BasisMatrix};

#[derive(Debug, Clone)]
pub struct GewekeConfig {
    pub n_sweeps: usize,
    pub n_prior_draws: usize,
    /// Batches for the batch-means standard error of the Gibbs averages.
    pub n_batches: usize,
    pub mh_step_sd: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GewekeStatistic {
    pub name: &'static str,
    pub prior_mean: f64,
    pub prior_se: f64,
    pub gibbs_mean: f64,
    pub gibbs_se: f64,
    pub z: f64,
}

/// Bounded or log-transformed summaries, chosen to have finite variance under
/// the prior. `ln τ₁` and raw loadings have infinite prior variance, so they
/// enter only through bounded transforms.
pub fn monitored(state: &ModelState) -> Vec<(&'static str, f64)> {
    let squash = |v: f64| v / (1.0 + v.abs());
    let sq2 = |v: f64| v * v / (1.0 + v * v);
    let unit = |v: f64| v / (1.0 + v);
    let mut out = vec![
        ("noise_var", state.noise_var),
        ("ln_noise_var", state.noise_var.ln()),
        ("tau_s1", state.shrink_s.tau[0]),
        ("tau_s1_bounded", unit(state.shrink_s.tau[0])),
        ("tau_t1_bounded", unit(state.shrink_t.tau[0])),
        ("load_s11", squash(state.load_s[(0, 0)])),
        ("load_s11_sq", sq2(state.load_s[(0, 0)])),
        ("load_t11_sq", sq2(state.load_t[(0, 0)])),
        ("ln_a_s_first", state.shrink_s.a_first.ln()),
        ("ln_a_s_rest", state.shrink_s.a_rest.ln()),
        ("ln_score_var1", state.score_var[0].ln()),
        ("ln_coef_var1", state.coef_var[0].ln()),
        ("coef_1_11", squash(state.coefs.first().map_or(0.0, |c| c[(0, 0)]))),
    ];
    if state.shrink_s.tau.len() > 1 {
        out.push(("tau_s2_bounded", unit(state.shrink_s.tau[1])));
    }
    out
}

/// Replace every cell of `data` by a draw from the sampling model given `state`.
pub fn simulate_observations<R: Rng + ?Sized>(
    state: &ModelState,
    data: &mut FunctionalDataset,
    b1: &BasisMatrix,
    b2: &BasisMatrix,
    rng: &mut R,
) -> Result<()> {
    let sd = state.noise_var.sqrt();
    for (theta, subj) in state.coefs.iter().zip(data.subjects.iter_mut()) {
        let f = eval_surface(theta, b1, b2)?;
        subj.y = DMatrix::from_fn(f.nrows(), f.ncols(), |j, k| f[(j, k)] + sd * std_normal(rng));
    }
    Ok(())
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

fn batch_mean_se(xs: &[f64], n_batches: usize) -> (f64, f64) {
    let size = xs.len() / n_batches;
    let means: Vec<f64> = (0..n_batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let (_, se) = mean_se(&means);
    (xs.iter().sum::<f64>() / xs.len() as f64, se)
}

/// Run both simulators and report a z-score per monitored statistic.
///
/// `template` fixes the grid, subject count and covariates; its responses are
/// overwritten. Step-size adaptation is disabled so every sweep uses the same
/// transition kernel.
pub fn geweke_test(
    hyper: &Hyperparameters,
    template: &FunctionalDataset,
    b1: &BasisMatrix,
    b2: &BasisMatrix,
    config: &GewekeConfig,
) -> Result<Vec<GewekeStatistic>> {
    if config.n_batches < 2 || config.n_sweeps < config.n_batches || config.n_prior_draws < 2 {
        return arg_err("Geweke test needs at least two batches and two prior draws");
    }
    let covariates: Vec<_> = template.subjects.iter().map(|s| s.x.clone()).collect();
    let (p1, p2) = (b1.dim(), b2.dim());

    let mut rng = stream(config.seed, 0);
    let mut prior_stats: Vec<Vec<f64>> = Vec::new();
    let mut names = Vec::new();
    for _ in 0..config.n_prior_draws {
        let st = ModelState::sample_prior(hyper, p1, p2, &covariates, &mut rng)?;
        let m = monitored(&st);
        if names.is_empty() {
            names = m.iter().map(|(n, _)| *n).collect();
            prior_stats = vec![Vec::with_capacity(config.n_prior_draws); m.len()];
        }
        for (acc, (_, v)) in prior_stats.iter_mut().zip(m) {
            acc.push(v);
        }
    }

    let mut rng = stream(config.seed, 1);
    let mut data = template.clone();
    let mut state = ModelState::sample_prior(hyper, p1, p2, &covariates, &mut rng)?;
    simulate_observations(&state, &mut data, b1, b2, &mut rng)?;
    let steps = [config.mh_step_sd; 4];
    let mut gibbs_stats = vec![Vec::with_capacity(config.n_sweeps); names.len()];
    for _ in 0..config.n_sweeps {
        {
            let ctx = SamplerContext::new(&data, b1, b2)?;
            sweep(&mut state, &ctx, hyper, &steps, &mut rng)?;
        }
        simulate_observations(&state, &mut data, b1, b2, &mut rng)?;
        for (acc, (_, v)) in gibbs_stats.iter_mut().zip(monitored(&state)) {
            acc.push(v);
        }
    }

    Ok(names
        .into_iter()
        .zip(prior_stats.iter().zip(&gibbs_stats))
        .map(|(name, (p, g))| {
            let (pm, pse) = mean_se(p);
            let (gm, gse) = batch_mean_se(g, config.n_batches);
            GewekeStatistic {
                name,
                prior_mean: pm,
                prior_se: pse,
                gibbs_mean: gm,
                gibbs_se: gse,
                z: (gm - pm) / (pse * pse + gse * gse).sqrt(),
            }
        })
        .collect())
}
