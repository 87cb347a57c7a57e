//! Run configuration: TOML file, then `LFDA_*` environment variables, then
//! command-line flags, each overriding the previous layer.

use std::path::{Path, PathBuf};

use lfda::model::Hyperparameters;
use lfda::posterior::Quadrature;
use lfda::sampler::ChainConfig;
use lfda::simgen::{default_fit_bases, ScenarioSpec};
use lfda::splines::{build_basis, BasisConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummaryConfig {
    /// Level of the simultaneous bands is `1 − alpha`.
    pub alpha: f64,
    pub n_components: usize,
    pub quadrature: Quadrature,
    /// Also write the full four-argument kernel.
    pub full_kernel: bool,
    /// Evaluation grids; the fitted data grids when absent.
    pub s_points: Option<Vec<f64>>,
    pub t_points: Option<Vec<f64>>,
    /// Covariate for the mean surface; the data's mean covariate when absent.
    pub covariate: Option<Vec<f64>>,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            n_components: 2,
            quadrature: Quadrature::Uniform,
            full_kernel: true,
            s_points: None,
            t_points: None,
            covariate: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    /// Relative errors of Bayes and empirical estimators.
    Errors,
    /// Information criteria across candidate basis dimensions.
    Selection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub experiment: Experiment,
    pub replications: usize,
    /// Skip the sampler and report the empirical estimator only.
    pub empirical_only: bool,
    /// Cubic basis dimensions `(p1, p2)` compared by the selection experiment.
    pub candidates: Vec<(usize, usize)>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::Errors,
            replications: 50,
            empirical_only: false,
            candidates: vec![(5, 5), (10, 10), (15, 15)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; overrides `chain.seed`.
    pub seed: u64,
    pub out: PathBuf,
    /// Long-format dataset for `fit` and `criteria`.
    pub data: Option<PathBuf>,
    /// Draw containers for `summarize` and `criteria`.
    pub draws: Vec<PathBuf>,
    pub chain: ChainConfig,
    pub basis_s: BasisConfig,
    pub basis_t: BasisConfig,
    pub hyper: Hyperparameters,
    pub scenario: ScenarioSpec,
    pub summary: SummaryConfig,
    pub benchmark: BenchmarkConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let (basis_s, basis_t) = default_fit_bases();
        Self {
            seed: 1,
            out: PathBuf::from("lfda-out"),
            data: None,
            draws: Vec::new(),
            chain: ChainConfig::default(),
            basis_s,
            basis_t,
            hyper: Hyperparameters::default(),
            scenario: ScenarioSpec::default(),
            summary: SummaryConfig::default(),
            benchmark: BenchmarkConfig::default(),
        }
    }
}

/// Values that may come from flags or environment variables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub iterations: Option<usize>,
    pub burnin: Option<usize>,
    pub thin: Option<usize>,
    pub alpha: Option<f64>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub draws: Vec<PathBuf>,
    pub replications: Option<usize>,
}

fn config_err(msg: impl std::fmt::Display) -> CliError {
    CliError::Config(msg.to_string())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(config_err)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text)
            }
            None => Ok(Self::default()),
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.chains {
            self.chain.n_chains = v;
        }
        if let Some(v) = o.iterations {
            self.chain.n_iterations = v;
        }
        if let Some(v) = o.burnin {
            self.chain.burn_in = v;
        }
        if let Some(v) = o.thin {
            self.chain.thin = v;
        }
        if let Some(v) = o.alpha {
            self.summary.alpha = v;
        }
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
        if let Some(v) = &o.data {
            self.data = Some(v.clone());
        }
        if !o.draws.is_empty() {
            self.draws = o.draws.clone();
        }
        if let Some(v) = o.replications {
            self.benchmark.replications = v;
        }
        self.chain.seed = self.seed;
    }

    /// Check every numeric constraint of the wrapped types.
    pub fn validate(&self) -> Result<()> {
        self.chain.validate().map_err(config_err)?;
        let bs = BasisConfig::new(self.basis_s.degree, self.basis_s.interior_knots.clone(), self.basis_s.domain)
            .map_err(|e| config_err(format!("basis_s: {e}")))?;
        let bt = BasisConfig::new(self.basis_t.degree, self.basis_t.interior_knots.clone(), self.basis_t.domain)
            .map_err(|e| config_err(format!("basis_t: {e}")))?;
        let dim = |b: &BasisConfig| build_basis(b, &[b.domain.0]).map(|m| m.dim()).map_err(config_err);
        self.hyper.validate(dim(&bs)?, dim(&bt)?).map_err(config_err)?;
        self.scenario.validate().map_err(config_err)?;
        if !(self.summary.alpha > 0.0 && self.summary.alpha < 1.0) {
            return Err(config_err(format!("alpha {} must lie in (0, 1)", self.summary.alpha)));
        }
        if self.summary.n_components == 0 {
            return Err(config_err("summary.n_components must be positive"));
        }
        if self.benchmark.replications == 0 {
            return Err(config_err("benchmark.replications must be positive"));
        }
        Ok(())
    }

    /// Effective configuration as TOML, every default included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Path of an existing input file, or a configuration error naming `what`.
    pub fn require_file(path: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
        match path {
            Some(p) if p.is_file() => Ok(p.clone()),
            Some(p) => Err(config_err(format!("{what} {} does not exist", p.display()))),
            None => Err(config_err(format!("no {what} given"))),
        }
    }

    /// Create the output directory.
    pub fn prepare_out(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out)
            .map_err(|e| config_err(format!("output directory {}: {e}", self.out.display())))
    }
}
