//! Command-line front end: configuration, dataset I/O, the draw container,
//! and the `simulate`, `fit`, `summarize`, `criteria` and `benchmark` verbs.

pub mod commands;
pub mod config;
pub mod container;
pub mod error;
pub mod io;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{Overrides, RunConfig};
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "lfda", version, about = "Bayesian tensor-spline factor models for longitudinal functional data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration file.
    #[arg(long, global = true, env = "LFDA_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "LFDA_SEED")]
    pub seed: Option<u64>,
    #[arg(long, global = true, env = "LFDA_CHAINS")]
    pub chains: Option<usize>,
    #[arg(long, global = true, env = "LFDA_ITERATIONS")]
    pub iterations: Option<usize>,
    #[arg(long, global = true, env = "LFDA_BURNIN")]
    pub burnin: Option<usize>,
    #[arg(long, global = true, env = "LFDA_THIN")]
    pub thin: Option<usize>,
    /// Simultaneous bands have level `1 − alpha`.
    #[arg(long, global = true, env = "LFDA_ALPHA")]
    pub alpha: Option<f64>,
    /// Output directory.
    #[arg(long, global = true, env = "LFDA_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset and its ground truth.
    Simulate,
    /// Run the sampler on a long-format dataset.
    Fit {
        #[arg(long, env = "LFDA_DATA")]
        data: Option<PathBuf>,
    },
    /// Posterior summaries of a draw file.
    Summarize {
        #[arg(long)]
        draws: Option<PathBuf>,
    },
    /// Information criteria for one or more draw files fitted to the same data.
    Criteria {
        #[arg(long, env = "LFDA_DATA")]
        data: Option<PathBuf>,
        #[arg(long, num_args = 1..)]
        draws: Vec<PathBuf>,
    },
    /// Replicated simulation experiments.
    Benchmark {
        #[arg(long, env = "LFDA_REPLICATIONS")]
        replications: Option<usize>,
    },
}

impl Cli {
    /// Configuration file, then environment, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        let mut o = Overrides {
            seed: self.seed,
            chains: self.chains,
            iterations: self.iterations,
            burnin: self.burnin,
            thin: self.thin,
            alpha: self.alpha,
            out: self.out.clone(),
            ..Default::default()
        };
        match &self.command {
            Command::Fit { data } => o.data = data.clone(),
            Command::Summarize { draws } => o.draws = draws.iter().cloned().collect(),
            Command::Criteria { data, draws } => {
                o.data = data.clone();
                o.draws = draws.clone();
            }
            Command::Benchmark { replications } => o.replications = *replications,
            Command::Simulate => {}
        }
        cfg.apply(&o);
        Ok(cfg)
    }

    pub fn run(&self) -> Result<()> {
        let cfg = self.resolve()?;
        match self.command {
            Command::Simulate => commands::simulate(&cfg),
            Command::Fit { .. } => commands::fit(&cfg),
            Command::Summarize { .. } => commands::summarize_command(&cfg),
            Command::Criteria { .. } => commands::criteria_command(&cfg),
            Command::Benchmark { .. } => commands::benchmark(&cfg),
        }
    }
}
