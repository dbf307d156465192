use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed prior and proposal constants.
///
/// `r2` is the slab variance for covariate effects and `sigma_alpha2` the
/// prior variance of the taxon intercepts; both are shared across taxa.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub h_alpha0: f64,
    pub h_beta: f64,
    pub a0: f64,
    pub b0: f64,
    pub r2: f64,
    pub sigma_alpha2: f64,
    pub a: f64,
    pub b: f64,
    pub a_m: f64,
    pub b_m: f64,
    pub proposal_sd: f64,
    /// Pseudovalue used for multiplicative zero replacement.
    pub delta: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            h_alpha0: 1.0,
            h_beta: 1.0,
            a0: 2.0,
            b0: 2.0,
            r2: 10.0,
            sigma_alpha2: 10.0,
            a: 1.0,
            b: 9.0,
            a_m: 1.0,
            b_m: 9.0,
            proposal_sd: 0.5,
            delta: 6.67e-5,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("h_alpha0", self.h_alpha0),
            ("h_beta", self.h_beta),
            ("a0", self.a0),
            ("b0", self.b0),
            ("r2", self.r2),
            ("sigma_alpha2", self.sigma_alpha2),
            ("a", self.a),
            ("b", self.b),
            ("a_m", self.a_m),
            ("b_m", self.b_m),
            ("proposal_sd", self.proposal_sd),
            ("delta", self.delta),
        ];
        for (name, v) in fields {
            // +inf is allowed for prior-dominance limits
            if v.is_nan() || v <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "hyperparameter {name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        Hyperparams::default().validate().unwrap();
    }

    #[test]
    fn rejects_nonpositive() {
        let h = Hyperparams {
            b0: 0.0,
            ..Hyperparams::default()
        };
        assert!(h.validate().is_err());
    }
}
