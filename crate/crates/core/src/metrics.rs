//! Selection and prediction scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionSummary {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
    pub sensitivity: f64,
    pub specificity: f64,
    pub mcc: f64,
}

impl ConfusionSummary {
    pub fn from_counts(tp: usize, tn: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let (tpf, tnf, fpf, fnf) = (tp as f64, tn as f64, fp as f64, fn_ as f64);
        let den = (tpf + fpf) * (tpf + fnf) * (tnf + fpf) * (tnf + fnf);
        // zero denominator -> 0
        let mcc = if den == 0.0 { 0.0 } else { (tpf * tnf - fpf * fnf) / den.sqrt() };
        ConfusionSummary {
            tp,
            tn,
            fp,
            fn_,
            sensitivity: ratio(tp, tp + fn_),
            specificity: ratio(tn, tn + fp),
            mcc,
        }
    }

    pub fn selected(&self) -> usize {
        self.tp + self.fp
    }
}

pub fn confusion(selected: &[bool], truth: &[bool]) -> Result<ConfusionSummary> {
    if selected.len() != truth.len() {
        return Err(Error::Dimension {
            what: "selection vs truth",
            expected: truth.len(),
            actual: selected.len(),
        });
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (&s, &t) in selected.iter().zip(truth) {
        match (s, t) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(ConfusionSummary::from_counts(tp, tn, fp, fn_))
}

/// Sum of squared errors together with its per-subject mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquaredError {
    pub sum: f64,
    pub mean: f64,
}

pub fn squared_error(y: &[f64], yhat: &[f64]) -> Result<SquaredError> {
    if y.len() != yhat.len() {
        return Err(Error::Dimension {
            what: "predictions",
            expected: y.len(),
            actual: yhat.len(),
        });
    }
    let sum: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    let mean = if y.is_empty() { 0.0 } else { sum / y.len() as f64 };
    Ok(SquaredError { sum, mean })
}

/// Median probability model: included iff `mppi >= threshold`.
pub fn median_model(mppi: &[f64], threshold: f64) -> Vec<bool> {
    mppi.iter().map(|&v| v >= threshold).collect()
}

/// Mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let m = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (m, 0.0);
    }
    let v = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    (m, v.sqrt())
}
