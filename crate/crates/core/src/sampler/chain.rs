use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::context::SamplerContext;
use super::mh::{mh_update_a, StepAdapter};
use super::rescale::rescale_columns;
use super::updates::{update_latent, update_loadings, update_scales};
use crate::error::{arg_err, Error, Result};
use crate::model::{init_state, log_likelihood, omega, FunctionalDataset, Hyperparameters, ModelDims, ModelState};
use crate::random::{stream, ChainRng};
use crate::splines::{build_basis, BasisConfig, BasisMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub n_iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub n_chains: usize,
    pub seed: u64,
    /// Initial log-scale random-walk SD for the shrinkage shapes.
    pub mh_step_sd: f64,
    /// Keep `Ω` for every stored draw instead of recomputing on demand.
    pub cache_omega: bool,
    /// Factorize `Ω` of every stored draw to confirm positive definiteness.
    pub check_omega: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_iterations: 10_000,
            burn_in: 2_500,
            thin: 1,
            n_chains: 4,
            seed: 1,
            mh_step_sd: 0.3,
            cache_omega: false,
            check_omega: true,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iterations == 0 || self.thin == 0 || self.n_chains == 0 {
            return arg_err("iterations, thinning and chain count must be positive");
        }
        if self.burn_in >= self.n_iterations {
            return arg_err(format!(
                "burn-in {} must be smaller than the iteration count {}",
                self.burn_in, self.n_iterations
            ));
        }
        if !(self.mh_step_sd > 0.0 && self.mh_step_sd.is_finite()) {
            return arg_err("MH step SD must be positive");
        }
        Ok(())
    }

    /// Stored draws per chain.
    pub fn draws_per_chain(&self) -> usize {
        (self.n_iterations - self.burn_in).div_ceil(self.thin)
    }
}

/// One retained state with its cached log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub chain_id: usize,
    pub iteration: usize,
    pub log_likelihood: f64,
    pub state: ModelState,
    pub omega: Option<DMatrix<f64>>,
}

impl Draw {
    pub fn omega(&self) -> DMatrix<f64> {
        self.omega.clone().unwrap_or_else(|| omega(&self.state))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainFailure {
    pub iteration: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainDiagnostics {
    pub chain_id: usize,
    /// Post-burn-in acceptance rate per shape parameter ([`super::MH_PARAMETERS`] order).
    pub acceptance_rates: [f64; 4],
    /// Step SDs in effect after burn-in adaptation.
    pub final_step_sd: [f64; 4],
    /// Log-likelihood after every iteration.
    pub log_likelihood_trace: Vec<f64>,
    /// Truncated-gamma draws that used the rejection fallback.
    pub truncation_fallbacks: usize,
    /// Post-burn-in acceptance rate of the column-rescaling moves.
    pub rescale_acceptance: f64,
    pub failure: Option<ChainFailure>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub dims: ModelDims,
    pub basis_s: BasisConfig,
    pub basis_t: BasisConfig,
    pub draws: Vec<Draw>,
    pub chains: Vec<ChainDiagnostics>,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn failed_chains(&self) -> impl Iterator<Item = &ChainDiagnostics> {
        self.chains.iter().filter(|c| c.failure.is_some())
    }
}

/// Bookkeeping from one sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepStats {
    /// MH acceptance flags in [`super::MH_PARAMETERS`] order.
    pub accepted: [bool; 4],
    pub truncation_fallbacks: usize,
    /// Accepted column-rescaling moves.
    pub rescales: usize,
}

/// One full sweep: latent → loadings → scales → MH on shapes, followed by the
/// column-rescaling moves.
pub fn sweep<R: rand::Rng + ?Sized>(
    state: &mut ModelState,
    ctx: &SamplerContext,
    hyper: &Hyperparameters,
    step_sd: &[f64; 4],
    rng: &mut R,
) -> Result<SweepStats> {
    update_latent(state, ctx, rng)?;
    let truncation_fallbacks = update_loadings(state, hyper, rng)?;
    update_scales(state, ctx, hyper, rng)?;
    let accepted = mh_update_a(state, hyper, step_sd, rng);
    let rescales = rescale_columns(state, ctx, rng);
    Ok(SweepStats {
        accepted,
        truncation_fallbacks,
        rescales,
    })
}

fn check_draw(state: &ModelState, check_omega: bool) -> Result<()> {
    state.validate()?;
    if check_omega {
        let om = omega(state);
        if nalgebra::Cholesky::new(om).is_none() {
            return Err(Error::State("Ω is not positive definite".into()));
        }
    }
    Ok(())
}

fn run_single(
    chain_id: usize,
    ctx: &SamplerContext,
    hyper: &Hyperparameters,
    config: &ChainConfig,
) -> (Vec<Draw>, ChainDiagnostics) {
    let mut rng: ChainRng = stream(config.seed, chain_id as u64);
    let mut diag = ChainDiagnostics {
        chain_id,
        acceptance_rates: [0.0; 4],
        final_step_sd: [config.mh_step_sd; 4],
        log_likelihood_trace: Vec::with_capacity(config.n_iterations),
        truncation_fallbacks: 0,
        rescale_acceptance: 0.0,
        failure: None,
    };
    let mut draws = Vec::with_capacity(config.draws_per_chain());
    let mut state = match init_state(hyper, ctx.data, ctx.b1, ctx.b2, &mut rng) {
        Ok(s) => s,
        Err(e) => {
            diag.failure = Some(ChainFailure {
                iteration: 0,
                message: e.to_string(),
            });
            return (draws, diag);
        }
    };
    let mut adapter = StepAdapter::new(config.mh_step_sd);
    let mut accepted = [0usize; 4];
    let mut rescales = 0usize;
    for it in 0..config.n_iterations {
        let step = adapter.step_sd;
        let result = sweep(&mut state, ctx, hyper, &step, &mut rng).and_then(|st| {
            diag.truncation_fallbacks += st.truncation_fallbacks;
            if it >= config.burn_in {
                rescales += st.rescales;
            }
            let ll = log_likelihood(&state, ctx.data, ctx.b1, ctx.b2)?;
            Ok((st.accepted, ll))
        });
        let (acc, ll) = match result {
            Ok(v) => v,
            Err(e) => {
                diag.failure = Some(ChainFailure {
                    iteration: it,
                    message: e.to_string(),
                });
                break;
            }
        };
        diag.log_likelihood_trace.push(ll);
        if it < config.burn_in {
            adapter.record(&acc);
            continue;
        }
        for (a, f) in accepted.iter_mut().zip(acc) {
            *a += usize::from(f);
        }
        if (it - config.burn_in) % config.thin == 0 {
            if let Err(e) = check_draw(&state, config.check_omega) {
                diag.failure = Some(ChainFailure {
                    iteration: it,
                    message: e.to_string(),
                });
                break;
            }
            draws.push(Draw {
                chain_id,
                iteration: it,
                log_likelihood: ll,
                omega: config.cache_omega.then(|| omega(&state)),
                state: state.clone(),
            });
        }
    }
    let kept = config.n_iterations - config.burn_in;
    diag.acceptance_rates = accepted.map(|a| a as f64 / kept as f64);
    diag.final_step_sd = adapter.step_sd;
    let moves = kept * (state.load_s.ncols() + state.load_t.ncols());
    diag.rescale_acceptance = rescales as f64 / moves.max(1) as f64;
    (draws, diag)
}

/// Run `n_chains` independent chains on `data` with bases built on its grids.
///
/// Chains run in parallel; the result is ordered by chain id and depends only
/// on `(data, hyper, bases, config)`. A failing chain keeps the draws it had
/// stored and records the failure in its diagnostics.
pub fn run_chain(
    data: &FunctionalDataset,
    hyper: &Hyperparameters,
    basis_s: &BasisConfig,
    basis_t: &BasisConfig,
    config: &ChainConfig,
) -> Result<PosteriorDraws> {
    config.validate()?;
    let b1 = build_basis(basis_s, &data.s_grid)?;
    let b2 = build_basis(basis_t, &data.t_grid)?;
    hyper.validate(b1.dim(), b2.dim())?;
    run_chain_with_bases(data, hyper, &b1, &b2, basis_s, basis_t, config)
}

fn run_chain_with_bases(
    data: &FunctionalDataset,
    hyper: &Hyperparameters,
    b1: &BasisMatrix,
    b2: &BasisMatrix,
    basis_s: &BasisConfig,
    basis_t: &BasisConfig,
    config: &ChainConfig,
) -> Result<PosteriorDraws> {
    let ctx = SamplerContext::new(data, b1, b2)?;
    let results: Vec<_> = (0..config.n_chains)
        .into_par_iter()
        .map(|c| run_single(c, &ctx, hyper, config))
        .collect();
    let mut draws = Vec::new();
    let mut chains = Vec::new();
    for (d, diag) in results {
        draws.extend(d);
        chains.push(diag);
    }
    Ok(PosteriorDraws {
        dims: ModelDims {
            p1: b1.dim(),
            p2: b2.dim(),
            q1: hyper.q_s,
            q2: hyper.q_t,
            d: data.d,
            n: data.n_subjects(),
        },
        basis_s: basis_s.clone(),
        basis_t: basis_t.clone(),
        draws,
        chains,
    })
}
