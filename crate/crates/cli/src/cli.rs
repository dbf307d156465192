use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use microjoint::experiment::Model;
use microjoint::simulation::SimConfig;
use microjoint::{Hyperparams, Mode, SamplerConfig};
use serde::Deserialize;

use crate::UsageError;

#[derive(Debug, Parser)]
#[command(name = "microjoint", version, about = "Joint microbiome count / balance regression with variable selection")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate simulated replicates.
    Simulate(SimulateArgs),
    /// Fit the joint model or the two-step comparator to one dataset.
    Fit(FitArgs),
    /// Predict test responses and export pointwise log-likelihoods.
    Predict(PredictArgs),
    /// Score fits against the generating truth.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
    /// TOML file with a [simulation] table.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub sim: SimFlags,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Dataset directory (y.csv, z.csv, x.csv) or a replicate directory with train/.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "joint")]
    pub model: Model,
    /// Partition file; defaults to the pivot partition.
    #[arg(long)]
    pub partition: Option<PathBuf>,
    /// TOML file with [hyper] and [sampler] tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperFlags,
    #[command(flatten)]
    pub sampler: SamplerFlags,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Output directory of `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// Test set directory; defaults to test/ next to the training data.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Fit directories to score.
    #[arg(long, num_args = 1.., conflicts_with = "sim")]
    pub runs: Vec<PathBuf>,
    /// Truth directory, overriding the one stored next to each run's data.
    #[arg(long, requires = "runs")]
    pub truth: Option<PathBuf>,
    /// Simulation directory: fit and score every replicate in it.
    #[arg(long)]
    pub sim: Option<PathBuf>,
    #[arg(long, default_value = "joint")]
    pub model: Model,
    /// Comma-separated b0 values; fits the joint model once per value.
    #[arg(long, value_delimiter = ',', requires = "sim")]
    pub sweep_b0: Vec<f64>,
    #[arg(long)]
    pub partition: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub hyper: HyperFlags,
    #[command(flatten)]
    pub sampler: SamplerFlags,
}

#[derive(Debug, Clone, Default, Args)]
pub struct HyperFlags {
    #[arg(long)]
    pub h_alpha0: Option<f64>,
    #[arg(long)]
    pub h_beta: Option<f64>,
    #[arg(long)]
    pub a0: Option<f64>,
    #[arg(long)]
    pub b0: Option<f64>,
    #[arg(long)]
    pub r2: Option<f64>,
    #[arg(long)]
    pub sigma_alpha2: Option<f64>,
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub a_m: Option<f64>,
    #[arg(long)]
    pub b_m: Option<f64>,
    #[arg(long)]
    pub proposal_sd: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SamplerFlags {
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub init_zeta_frac: Option<f64>,
    #[arg(long)]
    pub init_xi_frac: Option<f64>,
    /// Add/delete proposals per iteration for each indicator block.
    #[arg(long)]
    pub between_moves: Option<usize>,
    /// Use raw rather than standardized balances.
    #[arg(long)]
    pub raw_balances: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SimFlags {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub j: Option<usize>,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub n_true_cov: Option<usize>,
    #[arg(long)]
    pub n_true_bal: Option<usize>,
    /// Overdispersion of the Dirichlet layer.
    #[arg(long)]
    pub d: Option<f64>,
    #[arg(long)]
    pub sigma_eps: Option<f64>,
    #[arg(long)]
    pub zdot_min: Option<u32>,
    #[arg(long)]
    pub zdot_max: Option<u32>,
}

/// Contents of a `--config` file. Flags override it.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub hyper: Option<Hyperparams>,
    #[serde(default)]
    pub sampler: Option<SamplerConfig>,
    #[serde(default)]
    pub simulation: Option<SimConfig>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(ConfigFile::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
    }
}

fn set<T: Copy>(target: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *target = v;
    }
}

impl HyperFlags {
    pub fn resolve(&self, base: Option<Hyperparams>) -> Hyperparams {
        let mut h = base.unwrap_or_default();
        set(&mut h.h_alpha0, self.h_alpha0);
        set(&mut h.h_beta, self.h_beta);
        set(&mut h.a0, self.a0);
        set(&mut h.b0, self.b0);
        set(&mut h.r2, self.r2);
        set(&mut h.sigma_alpha2, self.sigma_alpha2);
        set(&mut h.a, self.a);
        set(&mut h.b, self.b);
        set(&mut h.a_m, self.a_m);
        set(&mut h.b_m, self.b_m);
        set(&mut h.proposal_sd, self.proposal_sd);
        set(&mut h.delta, self.delta);
        h
    }
}

impl SamplerFlags {
    pub fn resolve(&self, base: Option<SamplerConfig>) -> SamplerConfig {
        let mut c = base.unwrap_or_default();
        set(&mut c.iterations, self.iterations);
        set(&mut c.burn_in, self.burn_in);
        set(&mut c.thin, self.thin);
        set(&mut c.seed, self.seed);
        set(&mut c.mode, self.mode);
        set(&mut c.init_zeta_frac, self.init_zeta_frac);
        set(&mut c.init_xi_frac, self.init_xi_frac);
        set(&mut c.between_moves_per_iter, self.between_moves);
        if self.raw_balances {
            c.standardize_balances = false;
        }
        c
    }
}

impl SimFlags {
    pub fn resolve(&self, base: Option<SimConfig>, seed: Option<u64>) -> SimConfig {
        let mut c = base.unwrap_or_default();
        set(&mut c.n, self.n);
        set(&mut c.p, self.p);
        set(&mut c.j, self.j);
        set(&mut c.omega, self.omega);
        set(&mut c.n_true_cov, self.n_true_cov);
        set(&mut c.n_true_bal, self.n_true_bal);
        set(&mut c.d, self.d);
        set(&mut c.sigma_eps, self.sigma_eps);
        set(&mut c.zdot_range.0, self.zdot_min);
        set(&mut c.zdot_range.1, self.zdot_max);
        set(&mut c.seed, seed);
        c
    }
}
