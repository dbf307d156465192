//! Fit-and-score harness for simulated replicates.
//!
//! The response is centered and the covariates standardized with training
//! statistics; the test covariates reuse them. Errors are reported on the
//! original response scale.

use serde::{Deserialize, Serialize};

use crate::baselines::{predict_two_step, run_stage_two, run_two_step, TwoStepOutput};
use crate::error::Result;
use crate::mcmc::{run_chain, run_chains_shared, ChainOutput, Mode, SamplerConfig};
use crate::metrics::{confusion, mean_sd, median_model, squared_error, ConfusionSummary, SquaredError};
use crate::model::{Dataset, Hyperparams, PartitionSpec, Preprocessing};
use crate::prediction::{predict_y, Prediction};
use crate::simulation::{GroundTruth, Replicate, TestSet};

/// Training data after preprocessing, test data with transformed covariates
/// and the response on its original scale.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub test: TestSet,
    pub pre: Preprocessing,
    /// Training response on the original scale.
    pub y_train: Vec<f64>,
}

pub fn prepare(train: &Dataset, test: &TestSet) -> Result<Prepared> {
    let pre = Preprocessing::fit(train);
    let processed = pre.apply(train)?;
    let test = TestSet {
        z: test.z.clone(),
        x: pre.transform_covariates(&test.x)?,
        y: test.y.clone(),
    };
    Ok(Prepared {
        train: processed,
        test,
        pre,
        y_train: train.y().iter().copied().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    Joint,
    DmlmBayes,
}

impl std::fmt::Display for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Model::Joint => "joint",
            Model::DmlmBayes => "dmlm-bayes",
        })
    }
}

impl std::str::FromStr for Model {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" | "jm" => Ok(Model::Joint),
            "dmlm-bayes" | "dmlm_bayes" | "two-step" => Ok(Model::DmlmBayes),
            other => Err(crate::Error::InvalidConfig(format!("unknown model {other:?}"))),
        }
    }
}

/// Selection and prediction scores of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub covariates: ConfusionSummary,
    pub balances: ConfusionSummary,
    pub mse: SquaredError,
    pub pmse: Option<SquaredError>,
}

/// A fitted model together with its predictions on the original scale.
#[derive(Debug, Clone)]
pub struct Fit {
    pub model: Model,
    /// Chain whose covariate indicators are scored.
    pub dm_chain: ChainOutput,
    /// Chain whose balance indicators are scored.
    pub lm_chain: ChainOutput,
    pub prediction: Prediction,
}

fn shift(pred: Prediction, by: f64) -> Prediction {
    Prediction {
        test: pred.test.add_scalar(by),
        fitted: pred.fitted.add_scalar(by),
        intercept: pred.intercept + by,
    }
}

impl Fit {
    /// Wraps a joint-mode chain fitted to `prep.train`.
    pub fn joint(prep: &Prepared, chain: ChainOutput, spec: &PartitionSpec) -> Result<Fit> {
        let pred = predict_y(&chain, &prep.train, &prep.test, spec, &chain.hyper)?;
        Ok(Fit {
            model: Model::Joint,
            dm_chain: chain.clone(),
            lm_chain: chain,
            prediction: shift(pred, prep.pre.y_mean),
        })
    }

    /// Wraps a finished two-step fit.
    pub fn two_step(prep: &Prepared, out: TwoStepOutput, spec: &PartitionSpec, hyper: &Hyperparams) -> Result<Fit> {
        let pred = predict_two_step(&out, &prep.train, &prep.test, spec, hyper)?;
        Ok(Fit {
            model: Model::DmlmBayes,
            dm_chain: out.stage1,
            lm_chain: out.stage2,
            prediction: shift(pred, prep.pre.y_mean),
        })
    }
}

fn joint_config(config: &SamplerConfig) -> SamplerConfig {
    SamplerConfig {
        mode: Mode::Joint,
        keep_psi: true,
        ..config.clone()
    }
}

pub fn fit(prep: &Prepared, model: Model, hyper: &Hyperparams, config: &SamplerConfig, spec: &PartitionSpec) -> Result<Fit> {
    match model {
        Model::Joint => {
            let chain = run_chain(&prep.train, hyper, spec, &joint_config(config))?;
            Fit::joint(prep, chain, spec)
        }
        Model::DmlmBayes => {
            let out = run_two_step(&prep.train, hyper, spec, config)?;
            Fit::two_step(prep, out, spec, hyper)
        }
    }
}

/// Joint fits for several balance-selection settings on one shared
/// count-model trajectory; see [`run_chains_shared`].
pub fn fit_joint_shared(prep: &Prepared, hypers: &[Hyperparams], config: &SamplerConfig, spec: &PartitionSpec) -> Result<Vec<Fit>> {
    run_chains_shared(&prep.train, hypers, spec, &joint_config(config))?
        .into_iter()
        .map(|chain| Fit::joint(prep, chain, spec))
        .collect()
}

/// The two-step comparator reusing a joint fit's count-model draws as its
/// first stage. Valid when the joint chain ran with the same seed and
/// count-model hyperparameters.
pub fn fit_two_step_from(prep: &Prepared, joint: &Fit, hyper: &Hyperparams, config: &SamplerConfig, spec: &PartitionSpec) -> Result<Fit> {
    let out = run_stage_two(joint.dm_chain.clone(), &prep.train, hyper, spec, config)?;
    Fit::two_step(prep, out, spec, hyper)
}

pub fn score(fit: &Fit, prep: &Prepared, truth: &GroundTruth) -> Result<Scores> {
    let zeta_sel = median_model(fit.dm_chain.mppi_zeta.as_slice(), 0.5);
    let xi_sel = median_model(&fit.lm_chain.mppi_xi, 0.5);
    let pmse = match &prep.test.y {
        Some(y) => Some(squared_error(y.as_slice(), fit.prediction.test.as_slice())?),
        None => None,
    };
    Ok(Scores {
        covariates: confusion(&zeta_sel, truth.zeta_true.as_slice())?,
        balances: confusion(&xi_sel, &truth.xi_true)?,
        mse: squared_error(&prep.y_train, fit.prediction.fitted.as_slice())?,
        pmse,
    })
}

/// Prepares, fits and scores one replicate.
pub fn evaluate(rep: &Replicate, model: Model, hyper: &Hyperparams, config: &SamplerConfig, spec: &PartitionSpec) -> Result<Scores> {
    let prep = prepare(&rep.train, &rep.test)?;
    let f = fit(&prep, model, hyper, config, spec)?;
    score(&f, &prep, &rep.truth)
}

/// Mean and standard deviation of one column across replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Self {
        let (mean, sd) = mean_sd(values);
        MeanSd { mean, sd }
    }
}

/// Replicate averages laid out like the simulation tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub replicates: usize,
    pub cov_sensitivity: MeanSd,
    pub cov_specificity: MeanSd,
    pub cov_mcc: MeanSd,
    pub cov_selected: MeanSd,
    pub bal_sensitivity: MeanSd,
    pub bal_specificity: MeanSd,
    pub bal_mcc: MeanSd,
    pub bal_selected: MeanSd,
    pub mse: MeanSd,
    pub pmse: MeanSd,
}

pub fn aggregate(scores: &[Scores]) -> Aggregate {
    let col = |f: &dyn Fn(&Scores) -> f64| MeanSd::of(&scores.iter().map(f).collect::<Vec<_>>());
    Aggregate {
        replicates: scores.len(),
        cov_sensitivity: col(&|s| s.covariates.sensitivity),
        cov_specificity: col(&|s| s.covariates.specificity),
        cov_mcc: col(&|s| s.covariates.mcc),
        cov_selected: col(&|s| s.covariates.selected() as f64),
        bal_sensitivity: col(&|s| s.balances.sensitivity),
        bal_specificity: col(&|s| s.balances.specificity),
        bal_mcc: col(&|s| s.balances.mcc),
        bal_selected: col(&|s| s.balances.selected() as f64),
        mse: col(&|s| s.mse.sum),
        pmse: col(&|s| s.pmse.map_or(f64::NAN, |e| e.sum)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::{gen_replicate, replicate_rng, SimConfig};

    #[test]
    fn smoke_both_models() {
        let cfg = SimConfig { n: 12, p: 4, j: 8, n_true_cov: 2, n_true_bal: 2, ..SimConfig::default() };
        let rep = gen_replicate(&cfg, &mut replicate_rng(8, 0)).unwrap();
        let spec = crate::model::sbp_pivot(8).unwrap();
        let config = SamplerConfig { iterations: 300, burn_in: 100, thin: 10, ..SamplerConfig::default() };
        let hyper = Hyperparams::default();
        let mut scores = Vec::new();
        for model in [Model::Joint, Model::DmlmBayes] {
            let s = evaluate(&rep, model, &hyper, &config, &spec).unwrap();
            assert_eq!(s.covariates.tp + s.covariates.fn_, 2);
            assert_eq!(s.balances.tp + s.balances.tn + s.balances.fp + s.balances.fn_, 7);
            assert!(s.mse.sum.is_finite() && s.pmse.unwrap().sum.is_finite());
            scores.push(s);
        }

        let prep = prepare(&rep.train, &rep.test).unwrap();
        let hypers = [hyper, Hyperparams { b0: 8.0, ..hyper }];
        let fits = fit_joint_shared(&prep, &hypers, &config, &spec).unwrap();
        assert_eq!(score(&fits[0], &prep, &rep.truth).unwrap(), scores[0]);
        let two = fit_two_step_from(&prep, &fits[0], &hyper, &config, &spec).unwrap();
        assert_eq!(score(&two, &prep, &rep.truth).unwrap(), scores[1]);
    }

    #[test]
    fn prepared_test_uses_training_statistics() {
        let cfg = SimConfig { n: 10, p: 3, j: 4, n_true_cov: 1, n_true_bal: 1, ..SimConfig::default() };
        let rep = gen_replicate(&cfg, &mut replicate_rng(1, 3)).unwrap();
        let prep = prepare(&rep.train, &rep.test).unwrap();
        assert!(prep.train.y().sum().abs() < 1e-10);
        let expect = (rep.test.x[(0, 1)] - prep.pre.x_mean[1]) / prep.pre.x_sd[1];
        assert!((prep.test.x[(0, 1)] - expect).abs() < 1e-15);
        assert_eq!(prep.test.y, rep.test.y);
    }

    #[test]
    fn aggregate_layout() {
        let s = Scores {
            covariates: ConfusionSummary::from_counts(1, 1, 0, 0),
            balances: ConfusionSummary::from_counts(1, 0, 1, 0),
            mse: SquaredError { sum: 2.0, mean: 1.0 },
            pmse: Some(SquaredError { sum: 4.0, mean: 2.0 }),
        };
        let a = aggregate(&[s.clone(), s]);
        assert_eq!(a.replicates, 2);
        assert_eq!(a.cov_mcc, MeanSd { mean: 1.0, sd: 0.0 });
        assert_eq!(a.bal_selected.mean, 2.0);
        assert_eq!(a.pmse.mean, 4.0);
        assert_eq!("dmlm-bayes".parse::<Model>().unwrap(), Model::DmlmBayes);
    }
}
