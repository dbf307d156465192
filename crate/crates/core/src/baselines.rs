//! Two-step comparator: Dirichlet-multinomial selection alone, then balance
//! selection on balances frozen at the posterior-mean composition.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mcmc::{chain, run_chain, ChainOutput, Mode, Sampler, SamplerConfig};
use crate::model::{ColumnScaling, Dataset, Hyperparams, PartitionSpec};
use crate::prediction::{self, Prediction};
use crate::simulation::TestSet;

#[derive(Debug, Clone)]
pub struct TwoStepOutput {
    pub stage1: ChainOutput,
    /// Posterior mean composition from stage 1, `N x J`.
    pub psi_bar: DMatrix<f64>,
    /// Balances of `psi_bar` as used in stage 2.
    pub balances: DMatrix<f64>,
    pub scaling: Option<ColumnScaling>,
    pub stage2: ChainOutput,
}

/// Count model only; the response plays no part.
pub fn run_dm_only(data: &Dataset, hyper: &Hyperparams, spec: &PartitionSpec, config: &SamplerConfig) -> Result<ChainOutput> {
    if config.mode != Mode::DmOnly {
        return Err(Error::InvalidConfig(format!("stage 1 needs mode dm_only, got {}", config.mode)));
    }
    run_chain(data, hyper, spec, config)
}

/// Balance selection against a fixed balance matrix, used as given.
pub fn run_lm_balance_selection(
    balances: &DMatrix<f64>,
    y: &DVector<f64>,
    hyper: &Hyperparams,
    config: &SamplerConfig,
) -> Result<ChainOutput> {
    let sampler = Sampler::with_fixed_balances(y, balances.clone(), *hyper, config.clone())?;
    chain::drive(sampler, y.len(), 0, 0)
}

/// Both stages. `config.mode` is overridden per stage; stage 2 reuses the
/// seed on a different stream of draws.
pub fn run_two_step(data: &Dataset, hyper: &Hyperparams, spec: &PartitionSpec, config: &SamplerConfig) -> Result<TwoStepOutput> {
    let stage1 = run_dm_only(
        data,
        hyper,
        spec,
        &SamplerConfig {
            mode: Mode::DmOnly,
            ..config.clone()
        },
    )?;
    run_stage_two(stage1, data, hyper, spec, config)
}

/// Stage 2 on an existing stage-1 chain. Any chain that sampled the count
/// model will do; a joint chain with the same seed and count-model
/// hyperparameters carries exactly the stage-1 draws.
pub fn run_stage_two(
    stage1: ChainOutput,
    data: &Dataset,
    hyper: &Hyperparams,
    spec: &PartitionSpec,
    config: &SamplerConfig,
) -> Result<TwoStepOutput> {
    if !stage1.mode.samples_dm() {
        return Err(Error::InvalidConfig(format!("stage 1 chain has mode {}", stage1.mode)));
    }
    let psi_bar = stage1.psi_mean.clone();
    let raw = prediction::raw_balances(&psi_bar, spec, hyper.delta)?;
    let (balances, scaling) = prediction::fixed_balances(raw, config.standardize_balances)?;
    let stage2 = run_lm_balance_selection(
        &balances,
        data.y(),
        hyper,
        &SamplerConfig {
            mode: Mode::LmOnly,
            seed: config.seed.wrapping_add(1),
            ..config.clone()
        },
    )?;
    Ok(TwoStepOutput {
        stage1,
        psi_bar,
        balances,
        scaling,
        stage2,
    })
}

/// Test predictions: compositions from the stage-1 concentrations, ridge fits
/// on the frozen stage-2 balances.
pub fn predict_two_step(out: &TwoStepOutput, train: &Dataset, test: &TestSet, spec: &PartitionSpec, hyper: &Hyperparams) -> Result<Prediction> {
    test.check_dims(train.n_taxa(), train.n_covariates())?;
    let lambda = prediction::estimate_lambda_test(&out.stage1, &test.x)?;
    let psi = prediction::estimate_psi_test(&lambda, &test.z)?;
    let test_raw = prediction::raw_balances(&psi, spec, hyper.delta)?;
    prediction::predict_with(
        train.y(),
        hyper,
        &out.stage2.xi,
        |_| Ok((out.balances.clone(), out.scaling.clone())),
        &test_raw,
    )
}
