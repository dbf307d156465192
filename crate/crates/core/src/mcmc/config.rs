use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which blocks of the joint model are sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Counts and response together.
    Joint,
    /// Dirichlet-multinomial regression only; the response is ignored.
    DmOnly,
    /// Balance selection only, on balances held fixed.
    LmOnly,
}

impl Mode {
    pub fn samples_dm(self) -> bool {
        !matches!(self, Mode::LmOnly)
    }

    pub fn samples_lm(self) -> bool {
        !matches!(self, Mode::DmOnly)
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Mode::Joint),
            "dm_only" | "dm-only" => Ok(Mode::DmOnly),
            "lm_only" | "lm-only" => Ok(Mode::LmOnly),
            other => Err(Error::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Joint => "joint",
            Mode::DmOnly => "dm_only",
            Mode::LmOnly => "lm_only",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Fraction of covariate-taxon indicators switched on at initialization.
    pub init_zeta_frac: f64,
    /// Fraction of balance indicators switched on at initialization.
    pub init_xi_frac: f64,
    /// Add/delete proposals per iteration for each of the two indicator blocks.
    pub between_moves_per_iter: usize,
    pub mode: Mode,
    /// Standardize balances to mean 0 / variance 1 whenever they are rebuilt.
    pub standardize_balances: bool,
    /// Retain the composition `psi = c / T` at every kept iteration.
    pub keep_psi: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            iterations: 20_000,
            burn_in: 10_000,
            thin: 10,
            seed: 1,
            init_zeta_frac: 0.01,
            init_xi_frac: 0.05,
            between_moves_per_iter: 1,
            mode: Mode::Joint,
            standardize_balances: true,
            keep_psi: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidConfig(format!(
                "burn-in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidConfig("thin must be at least 1".into()));
        }
        if self.between_moves_per_iter == 0 {
            return Err(Error::InvalidConfig("between_moves_per_iter must be at least 1".into()));
        }
        for (name, v) in [("init_zeta_frac", self.init_zeta_frac), ("init_xi_frac", self.init_xi_frac)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        Ok(())
    }

    /// Number of retained samples, `(iterations - burn_in) / thin`.
    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    /// Whether 0-based iteration `it` is kept.
    pub fn keeps(&self, it: usize) -> bool {
        it >= self.burn_in && (it - self.burn_in + 1) % self.thin == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retained_count_matches_keeps() {
        let cfg = SamplerConfig {
            iterations: 200,
            burn_in: 100,
            thin: 10,
            ..SamplerConfig::default()
        };
        assert_eq!(cfg.retained(), 10);
        assert_eq!((0..200).filter(|&it| cfg.keeps(it)).count(), 10);
        let one = SamplerConfig {
            iterations: 57,
            burn_in: 50,
            thin: 7,
            ..SamplerConfig::default()
        };
        assert_eq!(one.retained(), 1);
        assert_eq!((0..57).filter(|&it| one.keeps(it)).count(), 1);
    }

    #[test]
    fn invalid_configs() {
        let base = SamplerConfig::default();
        assert!(SamplerConfig { burn_in: 20_000, ..base.clone() }.validate().is_err());
        assert!(SamplerConfig { thin: 0, ..base.clone() }.validate().is_err());
        assert!(SamplerConfig { init_xi_frac: 1.0, ..base.clone() }.validate().is_err());
        base.validate().unwrap();
        assert_eq!("dm-only".parse::<Mode>().unwrap(), Mode::DmOnly);
    }
}
