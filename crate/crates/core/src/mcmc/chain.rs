use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{AcceptanceCounts, Mode, Sampler, SamplerConfig};
use crate::error::{Error, Result};
use crate::model::{Dataset, Hyperparams, PartitionSpec};

/// Included covariate-taxon pairs of one retained sample.
///
/// `index[k] = j * P + p` for taxon `j` and covariate `p`; `value[k]` is the
/// effect. Pairs not listed are excluded with a zero effect.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EffectSample {
    pub index: Vec<u32>,
    pub value: Vec<f64>,
}

impl EffectSample {
    fn from_state(phi: &DMatrix<f64>, zeta: &DMatrix<bool>) -> Self {
        let (j, p) = zeta.shape();
        let mut out = EffectSample::default();
        for t in 0..j {
            for q in 0..p {
                if zeta[(t, q)] {
                    out.index.push((t * p + q) as u32);
                    out.value.push(phi[(t, q)]);
                }
            }
        }
        out
    }

    pub fn to_dense(&self, j: usize, p: usize) -> (DMatrix<f64>, DMatrix<bool>) {
        let mut phi = DMatrix::zeros(j, p);
        let mut zeta = DMatrix::from_element(j, p, false);
        for (&idx, &v) in self.index.iter().zip(&self.value) {
            let (t, q) = (idx as usize / p, idx as usize % p);
            phi[(t, q)] = v;
            zeta[(t, q)] = true;
        }
        (phi, zeta)
    }
}

/// Retained draws and summaries of one chain.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub mode: Mode,
    pub config: SamplerConfig,
    pub hyper: Hyperparams,
    pub n_subjects: usize,
    pub n_taxa: usize,
    pub n_covariates: usize,
    /// `S x J`.
    pub alpha: DMatrix<f64>,
    pub effects: Vec<EffectSample>,
    /// `S x N`.
    pub u: DMatrix<f64>,
    pub xi: Vec<Vec<bool>>,
    /// Compositions `c / T` per retained sample, when kept.
    pub psi: Vec<DMatrix<f64>>,
    /// Posterior mean composition over retained samples.
    pub psi_mean: DMatrix<f64>,
    /// Log posterior at every iteration, burn-in included.
    pub log_posterior: Vec<f64>,
    pub acceptance: AcceptanceCounts,
    /// `J x P`.
    pub mppi_zeta: DMatrix<f64>,
    pub mppi_xi: Vec<f64>,
}

impl ChainOutput {
    pub fn n_samples(&self) -> usize {
        self.xi.len()
    }

    pub fn n_balances(&self) -> usize {
        self.mppi_xi.len()
    }

    /// Indicator matrix of sample `s`.
    pub fn zeta_sample(&self, s: usize) -> DMatrix<bool> {
        self.effects[s].to_dense(self.n_taxa, self.n_covariates).1
    }

    pub fn phi_sample(&self, s: usize) -> DMatrix<f64> {
        self.effects[s].to_dense(self.n_taxa, self.n_covariates).0
    }

    /// Posterior mean of the effects, `J x P` (zeros included).
    pub fn phi_mean(&self) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.n_taxa, self.n_covariates);
        let p = self.n_covariates;
        for e in &self.effects {
            for (&idx, &v) in e.index.iter().zip(&e.value) {
                acc[(idx as usize / p, idx as usize % p)] += v;
            }
        }
        if !self.effects.is_empty() {
            acc /= self.effects.len() as f64;
        }
        acc
    }

    /// Posterior mean of the intercepts.
    pub fn alpha_mean(&self) -> DVector<f64> {
        let s = self.alpha.nrows().max(1) as f64;
        DVector::from_iterator(self.alpha.ncols(), self.alpha.column_iter().map(|c| c.sum() / s))
    }
}

/// Entrywise mean of binary samples.
pub fn mppi(samples: &[Vec<bool>]) -> Vec<f64> {
    let Some(first) = samples.first() else { return Vec::new() };
    let mut acc = vec![0usize; first.len()];
    for s in samples {
        for (a, &v) in acc.iter_mut().zip(s) {
            *a += usize::from(v);
        }
    }
    acc.into_iter().map(|a| a as f64 / samples.len() as f64).collect()
}

/// Runs a full chain and collects thinned post-burn-in samples.
pub fn run_chain(data: &Dataset, hyper: &Hyperparams, spec: &PartitionSpec, config: &SamplerConfig) -> Result<ChainOutput> {
    let sampler = Sampler::new(data, *hyper, spec, config.clone())?;
    drive(sampler, data.n(), data.n_taxa(), data.n_covariates())
}

/// Runs one chain per entry of `hypers`, all sharing a single count-model
/// trajectory. Output `k` is identical to `run_chain` with `hypers[k]`.
///
/// The hyperparameters that enter the count model (`a`, `b`, `r2`,
/// `sigma_alpha2`, `proposal_sd`) must agree across entries; the
/// balance-selection ones (`h_alpha0`, `h_beta`, `a0`, `b0`, `a_m`, `b_m`,
/// `delta`) may differ.
pub fn run_chains_shared(
    data: &Dataset,
    hypers: &[Hyperparams],
    spec: &PartitionSpec,
    config: &SamplerConfig,
) -> Result<Vec<ChainOutput>> {
    let Some(first) = hypers.first() else { return Ok(Vec::new()) };
    let dm_key = |h: &Hyperparams| [h.a, h.b, h.r2, h.sigma_alpha2, h.proposal_sd];
    if hypers.iter().any(|h| dm_key(h) != dm_key(first)) {
        return Err(Error::InvalidConfig(
            "shared chains need identical count-model hyperparameters".into(),
        ));
    }
    let samplers = hypers
        .iter()
        .map(|h| Sampler::new(data, *h, spec, config.clone()))
        .collect::<Result<Vec<_>>>()?;
    drive_many(samplers, data.n(), data.n_taxa(), data.n_covariates())
}

pub(crate) fn drive(sampler: Sampler<'_>, n: usize, j: usize, p: usize) -> Result<ChainOutput> {
    Ok(drive_many(vec![sampler], n, j, p)?.pop().expect("one chain in, one out"))
}

/// Retained draws of one chain.
struct Collector {
    alpha: DMatrix<f64>,
    u: DMatrix<f64>,
    effects: Vec<EffectSample>,
    xi: Vec<Vec<bool>>,
    psi: Vec<DMatrix<f64>>,
    psi_sum: DMatrix<f64>,
    zeta_counts: DMatrix<f64>,
    log_posterior: Vec<f64>,
    s: usize,
}

impl Collector {
    fn new(config: &SamplerConfig, n: usize, j: usize, p: usize) -> Self {
        let keep_dm = config.mode.samples_dm();
        let s_total = config.retained();
        let (n_out, j_out, p_out) = if keep_dm { (n, j, p) } else { (0, 0, 0) };
        Collector {
            alpha: DMatrix::zeros(s_total, j_out),
            u: DMatrix::zeros(s_total, n_out),
            effects: Vec::with_capacity(s_total),
            xi: Vec::with_capacity(s_total),
            psi: Vec::new(),
            psi_sum: DMatrix::zeros(n_out, j_out),
            zeta_counts: DMatrix::zeros(j_out, p_out),
            log_posterior: Vec::with_capacity(config.iterations),
            s: 0,
        }
    }

    fn record(&mut self, sampler: &mut Sampler<'_>, it: usize, p: usize) -> Result<()> {
        let lp = sampler.log_posterior()?;
        if !lp.is_finite() {
            return Err(Error::NonFiniteLogPosterior { iteration: it });
        }
        self.log_posterior.push(lp);
        let config = sampler.config();
        let keep_dm = config.mode.samples_dm();
        let state = sampler.state();
        debug_assert!(
            !keep_dm || state.check_invariants().is_ok(),
            "state invariant violated at iteration {it}: {:?}",
            state.check_invariants()
        );
        if config.keeps(it) {
            let s = self.s;
            if keep_dm {
                self.alpha.row_mut(s).copy_from(&state.alpha.transpose());
                self.u.row_mut(s).copy_from(&state.u.transpose());
                let e = EffectSample::from_state(&state.phi, &state.zeta);
                for &idx in &e.index {
                    self.zeta_counts[(idx as usize / p, idx as usize % p)] += 1.0;
                }
                self.effects.push(e);
                let comp = state.psi();
                self.psi_sum += &comp;
                if config.keep_psi {
                    self.psi.push(comp);
                }
            }
            self.xi.push(state.xi.clone());
            self.s += 1;
        }
        Ok(())
    }

    fn finish(self, sampler: &Sampler<'_>, n: usize, j: usize, p: usize) -> ChainOutput {
        let config = sampler.config().clone();
        let mode = config.mode;
        let s_total = config.retained();
        debug_assert_eq!(self.s, s_total);
        let denom = s_total.max(1) as f64;
        let mppi_xi = if mode.samples_lm() { mppi(&self.xi) } else { Vec::new() };
        ChainOutput {
            mode,
            config,
            hyper: *sampler.hyper(),
            n_subjects: n,
            n_taxa: j,
            n_covariates: p,
            alpha: self.alpha,
            effects: self.effects,
            u: self.u,
            xi: self.xi,
            psi: self.psi,
            psi_mean: self.psi_sum / denom,
            log_posterior: self.log_posterior,
            acceptance: *sampler.counts(),
            mppi_zeta: self.zeta_counts / denom,
            mppi_xi,
        }
    }
}

/// The first sampler advances the count model; the others copy its state
/// and only run their own balance-indicator moves.
fn drive_many(mut samplers: Vec<Sampler<'_>>, n: usize, j: usize, p: usize) -> Result<Vec<ChainOutput>> {
    let Some(lead) = samplers.first() else { return Ok(Vec::new()) };
    let config = lead.config().clone();
    let mut collectors: Vec<Collector> = samplers.iter().map(|s| Collector::new(s.config(), n, j, p)).collect();
    for it in 0..config.iterations {
        let (head, rest) = samplers.split_at_mut(1);
        let lead = &mut head[0];
        lead.sweep()?;
        for follower in rest.iter_mut() {
            follower.copy_dm_from(lead);
            if follower.config().mode.samples_lm() {
                follower.update_xi()?;
            }
        }
        for (c, s) in collectors.iter_mut().zip(samplers.iter_mut()) {
            c.record(s, it, p)?;
        }
    }
    Ok(collectors
        .into_iter()
        .zip(&samplers)
        .map(|(c, s)| c.finish(s, n, j, p))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mppi_examples() {
        assert_eq!(mppi(&[vec![true, true], vec![true, true]]), vec![1.0, 1.0]);
        let alt: Vec<Vec<bool>> = (0..6).map(|k| vec![k % 2 == 0]).collect();
        assert_eq!(mppi(&alt), vec![0.5]);
        let v = mppi(&[vec![true], vec![true], vec![false]]);
        assert!((v[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn effect_sample_round_trip() {
        let mut phi = DMatrix::zeros(3, 2);
        let mut zeta = DMatrix::from_element(3, 2, false);
        phi[(2, 1)] = -0.7;
        zeta[(2, 1)] = true;
        let e = EffectSample::from_state(&phi, &zeta);
        assert_eq!(e.index, vec![5]);
        assert_eq!(e.to_dense(3, 2), (phi, zeta));
    }
}
