//! Metropolis-Hastings within Gibbs sweeps over a [`ChainState`].
//!
//! One sweep updates, in order: every taxon intercept; the covariate
//! indicators and effects (add/delete moves, then a random-walk refresh of
//! every included effect); the latent gammas `c`; the auxiliaries `u`; and the
//! balance indicators. The latent-gamma step draws from
//! `Gamma(z + gamma, u + 1)` exactly, without a response factor.
//!
//! All randomness for the taxon-parallel steps is drawn from the main
//! generator before fanning out, or from per-taxon ChaCha streams keyed by a
//! per-sweep seed, so results do not depend on the thread count.
//!
//! The balance indicators draw from their own stream. The count-model updates
//! never look at the response or at `xi`, so for a given seed their trajectory
//! is the same whatever the balance-selection hyperparameters or mode.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::{ChainState, Mode, SamplerConfig};
use crate::error::{Error, Result};
use crate::model::{
    beta_binomial_logprior, log_marginal_y_columns, normal_logpdf, spike_slab_logprior, standardize_columns,
    zero_replace, zero_replaced_log_into, ColumnScaling, Dataset, Hyperparams, PartitionSpec,
};
use crate::par;

/// Accepted / proposed counts for one move type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MoveCounter {
    pub accepted: u64,
    pub proposed: u64,
}

impl MoveCounter {
    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += u64::from(accepted);
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceCounts {
    pub alpha: MoveCounter,
    pub add: MoveCounter,
    pub delete: MoveCounter,
    pub within: MoveCounter,
    pub xi: MoveCounter,
}

/// Derived per-cell quantities of the Dirichlet-multinomial block, `N x J`.
#[derive(Debug, Clone)]
struct DmCache {
    lambda: DMatrix<f64>,
    gamma: DMatrix<f64>,
    ln_gamma: DMatrix<f64>,
    log_c: DMatrix<f64>,
}

/// Proposed replacement of one taxon column.
struct ColumnProposal {
    log_lik_delta: f64,
    lambda: Vec<f64>,
    gamma: Vec<f64>,
    ln_gamma: Vec<f64>,
}

enum Balances {
    /// Rebuilt from `c` whenever the indicators are updated.
    Latent,
    Fixed,
}

pub struct Sampler<'a> {
    y: &'a DVector<f64>,
    data: Option<&'a Dataset>,
    spec: Option<&'a PartitionSpec>,
    hyper: Hyperparams,
    config: SamplerConfig,
    state: ChainState,
    cache: DmCache,
    balances: Balances,
    b: DMatrix<f64>,
    scaling: Option<ColumnScaling>,
    balances_stale: bool,
    log_marginal: Option<f64>,
    counts: AcceptanceCounts,
    rng: ChaCha8Rng,
    rng_lm: ChaCha8Rng,
}

fn lm_stream(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

fn choose_subset(rng: &mut ChaCha8Rng, len: usize, k: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, len, k.min(len)).into_vec()
}

impl<'a> Sampler<'a> {
    /// Builds and initializes a sampler for `Joint` or `DmOnly` mode (or
    /// `LmOnly` on balances of the empirical composition).
    ///
    /// Initialization: `alpha = 0`; a random `init_zeta_frac` share of
    /// indicators on with effects drawn `N(0, 0.25)`; `c = z + 0.5`;
    /// `u = zdot / T`; a random `init_xi_frac` share of balances on.
    pub fn new(data: &'a Dataset, hyper: Hyperparams, spec: &'a PartitionSpec, config: SamplerConfig) -> Result<Self> {
        hyper.validate()?;
        config.validate()?;
        if spec.n_taxa() != data.n_taxa() {
            return Err(Error::Dimension {
                what: "partition taxa",
                expected: data.n_taxa(),
                actual: spec.n_taxa(),
            });
        }
        let (n, j, p) = (data.n(), data.n_taxa(), data.n_covariates());
        let m = spec.len();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

        let mut phi = DMatrix::zeros(j, p);
        let mut zeta = DMatrix::from_element(j, p, false);
        let mut xi = vec![false; m];
        if config.mode.samples_dm() {
            let k = (config.init_zeta_frac * (j * p) as f64).round() as usize;
            for idx in choose_subset(&mut rng, j * p, k) {
                let (t, q) = (idx / p, idx % p);
                zeta[(t, q)] = true;
                let e: f64 = rng.sample(StandardNormal);
                phi[(t, q)] = 0.5 * e;
            }
        }
        let mut rng_lm = lm_stream(config.seed);
        if config.mode.samples_lm() {
            let k = (config.init_xi_frac * m as f64).round() as usize;
            for idx in choose_subset(&mut rng_lm, m, k) {
                xi[idx] = true;
            }
        }
        let c = data.z().map(|v| f64::from(v) + 0.5);
        let t = DVector::from_iterator(n, (0..n).map(|i| c.row(i).sum()));
        let u = DVector::from_iterator(n, (0..n).map(|i| data.row_totals()[i] as f64 / t[i]));
        let state = ChainState {
            alpha: DVector::zeros(j),
            phi,
            zeta,
            c,
            u,
            xi,
            t,
        };
        let cache = DmCache {
            lambda: DMatrix::zeros(n, j),
            gamma: DMatrix::zeros(n, j),
            ln_gamma: DMatrix::zeros(n, j),
            log_c: DMatrix::zeros(n, j),
        };
        let mut sampler = Sampler {
            y: data.y(),
            data: Some(data),
            spec: Some(spec),
            hyper,
            config,
            state,
            cache,
            balances: Balances::Latent,
            b: DMatrix::zeros(n, m),
            scaling: None,
            balances_stale: true,
            log_marginal: None,
            counts: AcceptanceCounts::default(),
            rng,
            rng_lm,
        };
        sampler.rebuild_cache()?;
        if sampler.config.mode == Mode::LmOnly {
            sampler.refresh_balances()?;
            sampler.balances = Balances::Fixed;
        }
        Ok(sampler)
    }

    /// Balance selection against a fixed `N x M` balance matrix, used as given.
    pub fn with_fixed_balances(
        y: &'a DVector<f64>,
        balances: DMatrix<f64>,
        hyper: Hyperparams,
        config: SamplerConfig,
    ) -> Result<Self> {
        hyper.validate()?;
        config.validate()?;
        if balances.nrows() != y.len() {
            return Err(Error::Dimension {
                what: "balance rows",
                expected: y.len(),
                actual: balances.nrows(),
            });
        }
        let config = SamplerConfig {
            mode: Mode::LmOnly,
            ..config
        };
        let n = y.len();
        let m = balances.ncols();
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut rng_lm = lm_stream(config.seed);
        let mut xi = vec![false; m];
        let k = (config.init_xi_frac * m as f64).round() as usize;
        for idx in choose_subset(&mut rng_lm, m, k) {
            xi[idx] = true;
        }
        let state = ChainState {
            alpha: DVector::zeros(0),
            phi: DMatrix::zeros(0, 0),
            zeta: DMatrix::from_element(0, 0, false),
            c: DMatrix::zeros(n, 0),
            u: DVector::zeros(0),
            xi,
            t: DVector::zeros(0),
        };
        let cache = DmCache {
            lambda: DMatrix::zeros(n, 0),
            gamma: DMatrix::zeros(n, 0),
            ln_gamma: DMatrix::zeros(n, 0),
            log_c: DMatrix::zeros(n, 0),
        };
        Ok(Sampler {
            y,
            data: None,
            spec: None,
            hyper,
            config,
            state,
            cache,
            balances: Balances::Fixed,
            b: balances,
            scaling: None,
            balances_stale: false,
            log_marginal: None,
            counts: AcceptanceCounts::default(),
            rng,
            rng_lm,
        })
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn counts(&self) -> &AcceptanceCounts {
        &self.counts
    }

    /// Replaces the state wholesale (dimensions must match) and rebuilds caches.
    pub fn set_state(&mut self, state: ChainState) -> Result<()> {
        let cur = &self.state;
        if state.alpha.len() != cur.alpha.len()
            || state.phi.shape() != cur.phi.shape()
            || state.zeta.shape() != cur.zeta.shape()
            || state.c.shape() != cur.c.shape()
            || state.u.len() != cur.u.len()
            || state.xi.len() != cur.xi.len()
        {
            return Err(Error::InvalidConfig("replacement state has different dimensions".into()));
        }
        self.state = state;
        self.rebuild_cache()?;
        if matches!(self.balances, Balances::Latent) {
            self.balances_stale = true;
        }
        self.log_marginal = None;
        Ok(())
    }

    /// Current balance matrix (refreshed from `c` if needed).
    pub fn balances(&mut self) -> Result<&DMatrix<f64>> {
        if self.balances_stale {
            self.refresh_balances()?;
        }
        Ok(&self.b)
    }

    /// Column statistics of the last balance standardization, if any.
    pub fn balance_scaling(&self) -> Option<&ColumnScaling> {
        self.scaling.as_ref()
    }

    fn data(&self) -> &'a Dataset {
        self.data.expect("Dirichlet-multinomial block requires a dataset")
    }

    fn rebuild_cache(&mut self) -> Result<()> {
        let Some(data) = self.data else { return Ok(()) };
        let (n, j) = (data.n(), data.n_taxa());
        let x = data.x();
        let s = &self.state;
        for t in 0..j {
            for i in 0..n {
                let mut eta = s.alpha[t];
                for q in 0..x.ncols() {
                    if s.zeta[(t, q)] {
                        eta += s.phi[(t, q)] * x[(i, q)];
                    }
                }
                let g = eta.exp();
                if !g.is_finite() || g <= 0.0 {
                    return Err(Error::NonFinite {
                        what: "Dirichlet concentration",
                        row: i,
                        col: t,
                    });
                }
                self.cache.lambda[(i, t)] = eta;
                self.cache.gamma[(i, t)] = g;
                self.cache.ln_gamma[(i, t)] = ln_gamma(g);
                self.cache.log_c[(i, t)] = s.c[(i, t)].ln();
            }
        }
        for i in 0..n {
            self.state.t[i] = self.state.c.row(i).iter().sum();
        }
        Ok(())
    }

    /// Change in the augmented log-likelihood when column `j` of lambda moves
    /// by `shift(i)`. Non-finite or vanishing concentrations give `-inf`.
    fn propose_column(&self, j: usize, shift: impl Fn(usize) -> f64) -> ColumnProposal {
        let n = self.cache.lambda.nrows();
        let lam = self.cache.lambda.column(j);
        let gam = self.cache.gamma.column(j);
        let lng = self.cache.ln_gamma.column(j);
        let logc = self.cache.log_c.column(j);
        let mut out = ColumnProposal {
            log_lik_delta: 0.0,
            lambda: Vec::with_capacity(n),
            gamma: Vec::with_capacity(n),
            ln_gamma: Vec::with_capacity(n),
        };
        let mut delta = 0.0;
        for i in 0..n {
            let l = lam[i] + shift(i);
            let g = l.exp();
            if !g.is_finite() || g <= 0.0 {
                out.log_lik_delta = f64::NEG_INFINITY;
                return out;
            }
            let lg = ln_gamma(g);
            delta += (g - gam[i]) * logc[i] - lg + lng[i];
            out.lambda.push(l);
            out.gamma.push(g);
            out.ln_gamma.push(lg);
        }
        out.log_lik_delta = delta;
        out
    }

    fn commit_column(&mut self, j: usize, prop: ColumnProposal) {
        self.cache.lambda.column_mut(j).copy_from_slice(&prop.lambda);
        self.cache.gamma.column_mut(j).copy_from_slice(&prop.gamma);
        self.cache.ln_gamma.column_mut(j).copy_from_slice(&prop.ln_gamma);
    }

    /// Log acceptance ratio for moving `alpha[j]` to `alpha_new`.
    pub fn log_ratio_alpha(&self, j: usize, alpha_new: f64) -> f64 {
        let d = alpha_new - self.state.alpha[j];
        let prop = self.propose_column(j, |_| d);
        prop.log_lik_delta + normal_logpdf(alpha_new, self.hyper.sigma_alpha2)
            - normal_logpdf(self.state.alpha[j], self.hyper.sigma_alpha2)
    }

    /// Log acceptance ratio of the add move switching on `(j, p)` with effect `phi_new`.
    pub fn log_ratio_add(&self, j: usize, p: usize, phi_new: f64) -> f64 {
        debug_assert!(!self.state.zeta[(j, p)]);
        let x = self.data().x();
        let prop = self.propose_column(j, |i| phi_new * x[(i, p)]);
        prop.log_lik_delta + spike_slab_logprior(phi_new, true, self.hyper.r2)
            + beta_binomial_logprior(true, self.hyper.a, self.hyper.b)
            - beta_binomial_logprior(false, self.hyper.a, self.hyper.b)
    }

    /// Log acceptance ratio of the delete move switching off `(j, p)`.
    pub fn log_ratio_delete(&self, j: usize, p: usize) -> f64 {
        debug_assert!(self.state.zeta[(j, p)]);
        let x = self.data().x();
        let phi = self.state.phi[(j, p)];
        let prop = self.propose_column(j, |i| -phi * x[(i, p)]);
        prop.log_lik_delta + beta_binomial_logprior(false, self.hyper.a, self.hyper.b)
            - spike_slab_logprior(phi, true, self.hyper.r2)
            - beta_binomial_logprior(true, self.hyper.a, self.hyper.b)
    }

    /// Log acceptance ratio of the within-model move of an included effect.
    pub fn log_ratio_within(&self, j: usize, p: usize, phi_new: f64) -> f64 {
        debug_assert!(self.state.zeta[(j, p)]);
        let x = self.data().x();
        let d = phi_new - self.state.phi[(j, p)];
        let prop = self.propose_column(j, |i| d * x[(i, p)]);
        prop.log_lik_delta + normal_logpdf(phi_new, self.hyper.r2)
            - normal_logpdf(self.state.phi[(j, p)], self.hyper.r2)
    }

    /// Log acceptance ratio for flipping balance indicator `m`, using the
    /// current balance matrix.
    pub fn log_ratio_xi(&mut self, m: usize) -> Result<f64> {
        let current = self.current_log_marginal()?;
        let mut flipped = self.state.xi.clone();
        flipped[m] = !flipped[m];
        let proposed = self.log_marginal_for(&flipped)?;
        Ok(proposed - current + beta_binomial_logprior(flipped[m], self.hyper.a_m, self.hyper.b_m)
            - beta_binomial_logprior(self.state.xi[m], self.hyper.a_m, self.hyper.b_m))
    }

    /// Sets `alpha[j]` and updates the cached column.
    pub fn set_alpha(&mut self, j: usize, value: f64) -> Result<()> {
        let d = value - self.state.alpha[j];
        let prop = self.propose_column(j, |_| d);
        if !prop.log_lik_delta.is_finite() {
            return Err(Error::NonFinite {
                what: "Dirichlet concentration",
                row: 0,
                col: j,
            });
        }
        self.commit_column(j, prop);
        self.state.alpha[j] = value;
        Ok(())
    }

    /// Sets indicator and effect of `(j, p)`; the effect must be 0 when excluded.
    pub fn set_effect(&mut self, j: usize, p: usize, included: bool, value: f64) -> Result<()> {
        if !included && value != 0.0 {
            return Err(Error::Domain("excluded effects must be zero".into()));
        }
        let x = self.data().x();
        let d = value - self.state.phi[(j, p)];
        let prop = self.propose_column(j, |i| d * x[(i, p)]);
        if !prop.log_lik_delta.is_finite() {
            return Err(Error::NonFinite {
                what: "Dirichlet concentration",
                row: 0,
                col: j,
            });
        }
        self.commit_column(j, prop);
        self.state.phi[(j, p)] = value;
        self.state.zeta[(j, p)] = included;
        Ok(())
    }

    pub fn set_xi(&mut self, m: usize, included: bool) {
        if self.state.xi[m] != included {
            self.state.xi[m] = included;
            self.log_marginal = None;
        }
    }

    /// Random-walk update of every taxon intercept.
    pub fn update_alpha(&mut self) {
        let j = self.state.alpha.len();
        let sd = self.hyper.proposal_sd;
        let draws: Vec<(f64, f64)> = (0..j)
            .map(|_| {
                let e: f64 = self.rng.sample(StandardNormal);
                let u: f64 = self.rng.random();
                (e, u)
            })
            .collect();
        let this = &*self;
        let results = par::map_range(j, |t| {
            let (e, u) = draws[t];
            let old = this.state.alpha[t];
            let new = old + sd * e;
            let prop = this.propose_column(t, |_| sd * e);
            let log_ratio = prop.log_lik_delta + normal_logpdf(new, this.hyper.sigma_alpha2)
                - normal_logpdf(old, this.hyper.sigma_alpha2);
            (u.ln() < log_ratio).then_some((new, prop))
        });
        for (t, res) in results.into_iter().enumerate() {
            self.counts.alpha.record(res.is_some());
            if let Some((new, prop)) = res {
                self.commit_column(t, prop);
                self.state.alpha[t] = new;
            }
        }
    }

    /// Between-model add/delete moves followed by the within-model refresh.
    pub fn update_zeta_phi(&mut self) {
        let (j, p) = self.state.zeta.shape();
        if j * p == 0 {
            return;
        }
        let sd = self.hyper.proposal_sd;
        let x = self.data().x();
        for _ in 0..self.config.between_moves_per_iter {
            let idx = self.rng.random_range(0..j * p);
            let (t, q) = (idx / p, idx % p);
            let u: f64 = self.rng.random();
            if self.state.zeta[(t, q)] {
                let log_ratio = self.log_ratio_delete(t, q);
                let accept = u.ln() < log_ratio;
                self.counts.delete.record(accept);
                if accept {
                    let phi = self.state.phi[(t, q)];
                    let prop = self.propose_column(t, |i| -phi * x[(i, q)]);
                    self.commit_column(t, prop);
                    self.state.phi[(t, q)] = 0.0;
                    self.state.zeta[(t, q)] = false;
                }
            } else {
                let e: f64 = self.rng.sample(StandardNormal);
                let phi_new = self.state.phi[(t, q)] + sd * e;
                let prop = self.propose_column(t, |i| phi_new * x[(i, q)]);
                let log_ratio = prop.log_lik_delta
                    + spike_slab_logprior(phi_new, true, self.hyper.r2)
                    + beta_binomial_logprior(true, self.hyper.a, self.hyper.b)
                    - beta_binomial_logprior(false, self.hyper.a, self.hyper.b);
                let accept = u.ln() < log_ratio;
                self.counts.add.record(accept);
                if accept {
                    self.commit_column(t, prop);
                    self.state.phi[(t, q)] = phi_new;
                    self.state.zeta[(t, q)] = true;
                }
            }
        }
        self.update_within();
    }

    fn update_within(&mut self) {
        let (j, p) = self.state.zeta.shape();
        let sd = self.hyper.proposal_sd;
        // (taxon, [(covariate, normal draw, uniform)]) in taxon-major order
        let mut work: Vec<(usize, Vec<(usize, f64, f64)>)> = Vec::new();
        for t in 0..j {
            let mut entries = Vec::new();
            for q in 0..p {
                if self.state.zeta[(t, q)] {
                    let e: f64 = self.rng.sample(StandardNormal);
                    let u: f64 = self.rng.random();
                    entries.push((q, e, u));
                }
            }
            if !entries.is_empty() {
                work.push((t, entries));
            }
        }
        if work.is_empty() {
            return;
        }
        let x = self.data().x();
        let this = &*self;
        let r2 = self.hyper.r2;
        let results = par::map_slice(&work, |(t, entries)| {
            let t = *t;
            let n = this.cache.lambda.nrows();
            let mut lam: Vec<f64> = this.cache.lambda.column(t).iter().copied().collect();
            let mut gam: Vec<f64> = this.cache.gamma.column(t).iter().copied().collect();
            let mut lng: Vec<f64> = this.cache.ln_gamma.column(t).iter().copied().collect();
            let logc = this.cache.log_c.column(t);
            let mut accepted = Vec::with_capacity(entries.len());
            let mut new_lam = vec![0.0; n];
            let mut new_gam = vec![0.0; n];
            let mut new_lng = vec![0.0; n];
            for &(q, e, u) in entries {
                let old = this.state.phi[(t, q)];
                let d = sd * e;
                let mut delta = 0.0;
                let mut finite = true;
                for i in 0..n {
                    let l = lam[i] + d * x[(i, q)];
                    let g = l.exp();
                    if !g.is_finite() || g <= 0.0 {
                        finite = false;
                        break;
                    }
                    let lg = ln_gamma(g);
                    delta += (g - gam[i]) * logc[i] - lg + lng[i];
                    new_lam[i] = l;
                    new_gam[i] = g;
                    new_lng[i] = lg;
                }
                let log_ratio = if finite {
                    delta + normal_logpdf(old + d, r2) - normal_logpdf(old, r2)
                } else {
                    f64::NEG_INFINITY
                };
                let accept = u.ln() < log_ratio;
                if accept {
                    std::mem::swap(&mut lam, &mut new_lam);
                    std::mem::swap(&mut gam, &mut new_gam);
                    std::mem::swap(&mut lng, &mut new_lng);
                    accepted.push((q, old + d));
                } else {
                    accepted.push((q, f64::NAN));
                }
            }
            (lam, gam, lng, accepted)
        });
        for ((t, _), (lam, gam, lng, accepted)) in work.iter().zip(results) {
            for (q, v) in accepted {
                let ok = !v.is_nan();
                self.counts.within.record(ok);
                if ok {
                    self.state.phi[(*t, q)] = v;
                }
            }
            self.cache.lambda.column_mut(*t).copy_from_slice(&lam);
            self.cache.gamma.column_mut(*t).copy_from_slice(&gam);
            self.cache.ln_gamma.column_mut(*t).copy_from_slice(&lng);
        }
    }

    /// Gibbs step `c[i, j] ~ Gamma(z[i, j] + gamma[i, j], rate = u[i] + 1)`.
    pub fn update_c(&mut self) -> Result<()> {
        let data = self.data();
        let (n, j) = (data.n(), data.n_taxa());
        if j == 0 {
            return Ok(());
        }
        let sweep_seed: u64 = self.rng.random();
        let z = data.z();
        let gamma = &self.cache.gamma;
        let u = &self.state.u;
        let mut failure = std::sync::Mutex::new(None);
        {
            let failure = &failure;
            let c_slice = self.state.c.as_mut_slice();
            let logc_slice = self.cache.log_c.as_mut_slice();
            let mut pairs: Vec<(&mut [f64], &mut [f64])> =
                c_slice.chunks_mut(n).zip(logc_slice.chunks_mut(n)).collect();
            par::for_each_chunk_mut(&mut pairs, 1, |t, chunk| {
                let (c_col, logc_col) = &mut chunk[0];
                let mut rng = ChaCha8Rng::seed_from_u64(sweep_seed);
                rng.set_stream(t as u64);
                for i in 0..n {
                    let shape = f64::from(z[(i, t)]) + gamma[(i, t)];
                    let rate = u[i] + 1.0;
                    let dist = match Gamma::new(shape, 1.0 / rate) {
                        Ok(d) => d,
                        Err(_) => {
                            *failure.lock().unwrap() = Some((i, t));
                            return;
                        }
                    };
                    let v = dist.sample(&mut rng).max(f64::MIN_POSITIVE);
                    c_col[i] = v;
                    logc_col[i] = v.ln();
                }
            });
        }
        if let Some((i, t)) = failure.get_mut().unwrap().take() {
            return Err(Error::NonFinite {
                what: "gamma shape for latent c",
                row: i,
                col: t,
            });
        }
        for i in 0..n {
            self.state.t[i] = self.state.c.row(i).iter().sum();
        }
        if matches!(self.balances, Balances::Latent) {
            self.balances_stale = true;
            self.log_marginal = None;
        }
        Ok(())
    }

    /// Gibbs step `u[i] ~ Gamma(zdot[i], rate = T[i])`.
    pub fn update_u(&mut self) -> Result<()> {
        let data = self.data();
        for i in 0..data.n() {
            let shape = data.row_totals()[i] as f64;
            let dist = Gamma::new(shape, 1.0 / self.state.t[i]).map_err(|_| Error::NonFinite {
                what: "gamma parameters for u",
                row: i,
                col: 0,
            })?;
            self.state.u[i] = dist.sample(&mut self.rng).max(f64::MIN_POSITIVE);
        }
        Ok(())
    }

    /// Add/delete moves on the balance indicators.
    pub fn update_xi(&mut self) -> Result<()> {
        let m = self.state.xi.len();
        if m == 0 {
            return Ok(());
        }
        if self.config.mode == Mode::DmOnly {
            return Err(Error::InvalidConfig("balance indicators are not sampled in dm_only mode".into()));
        }
        for _ in 0..self.config.between_moves_per_iter {
            let k = self.rng_lm.random_range(0..m);
            let u: f64 = self.rng_lm.random();
            let current = self.current_log_marginal()?;
            let mut flipped = self.state.xi.clone();
            flipped[k] = !flipped[k];
            let proposed = self.log_marginal_for(&flipped)?;
            let log_ratio = proposed - current
                + beta_binomial_logprior(flipped[k], self.hyper.a_m, self.hyper.b_m)
                - beta_binomial_logprior(self.state.xi[k], self.hyper.a_m, self.hyper.b_m);
            let accept = u.ln() < log_ratio;
            self.counts.xi.record(accept);
            if accept {
                self.state.xi = flipped;
                self.log_marginal = Some(proposed);
            }
        }
        Ok(())
    }

    /// One full sweep in the fixed order.
    pub fn sweep(&mut self) -> Result<()> {
        self.sweep_dm()?;
        if self.config.mode.samples_lm() {
            self.update_xi()?;
        }
        Ok(())
    }

    pub(crate) fn sweep_dm(&mut self) -> Result<()> {
        if self.config.mode.samples_dm() {
            self.update_alpha();
            self.update_zeta_phi();
            self.update_c()?;
            self.update_u()?;
        }
        Ok(())
    }

    /// Takes over the count-model state, caches and move counters of `other`.
    pub(crate) fn copy_dm_from(&mut self, other: &Sampler<'_>) {
        let (dst, src) = (&mut self.state, &other.state);
        dst.alpha.clone_from(&src.alpha);
        dst.phi.clone_from(&src.phi);
        dst.zeta.clone_from(&src.zeta);
        dst.c.clone_from(&src.c);
        dst.u.clone_from(&src.u);
        dst.t.clone_from(&src.t);
        self.cache.clone_from(&other.cache);
        let xi = self.counts.xi;
        self.counts = other.counts;
        self.counts.xi = xi;
        if matches!(self.balances, Balances::Latent) {
            self.balances_stale = true;
            self.log_marginal = None;
        }
    }

    fn refresh_balances(&mut self) -> Result<()> {
        let spec = self.spec.expect("latent balances require a partition");
        let (n, j) = self.state.c.shape();
        let m = spec.len();
        let mut log_row = vec![0.0; j];
        let mut scratch = vec![0.0; m];
        let mut row = vec![0.0; m];
        if self.b.shape() != (n, m) {
            self.b = DMatrix::zeros(n, m);
        }
        for i in 0..n {
            let logc = self.cache.log_c.row(i);
            zero_replaced_log_into(logc.iter().copied(), self.state.t[i].ln(), self.hyper.delta, &mut log_row)?;
            spec.balances_from_log(&log_row, &mut scratch, &mut row);
            for k in 0..m {
                self.b[(i, k)] = row[k];
            }
        }
        self.scaling = if self.config.standardize_balances {
            Some(standardize_columns(&mut self.b)?)
        } else {
            None
        };
        self.balances_stale = false;
        self.log_marginal = None;
        Ok(())
    }

    fn log_marginal_for(&mut self, xi: &[bool]) -> Result<f64> {
        if self.balances_stale {
            self.refresh_balances()?;
        }
        let selected: Vec<usize> = xi.iter().enumerate().filter(|(_, v)| **v).map(|(k, _)| k).collect();
        log_marginal_y_columns(self.y, &self.b, &selected, &self.hyper)
    }

    fn current_log_marginal(&mut self) -> Result<f64> {
        if self.balances_stale {
            self.refresh_balances()?;
        }
        if let Some(v) = self.log_marginal {
            return Ok(v);
        }
        let xi = self.state.xi.clone();
        let v = self.log_marginal_for(&xi)?;
        self.log_marginal = Some(v);
        Ok(v)
    }

    /// Unnormalized log posterior of the current state for the sampled blocks.
    pub fn log_posterior(&mut self) -> Result<f64> {
        let mut total = 0.0;
        if self.config.mode.samples_dm() {
            total += self.log_posterior_dm();
        }
        if self.config.mode.samples_lm() {
            total += self.current_log_marginal()?;
            total += self
                .state
                .xi
                .iter()
                .map(|&v| beta_binomial_logprior(v, self.hyper.a_m, self.hyper.b_m))
                .sum::<f64>();
        }
        Ok(total)
    }

    fn log_posterior_dm(&self) -> f64 {
        let data = self.data();
        let (n, j) = (data.n(), data.n_taxa());
        let z = data.z();
        let s = &self.state;
        let mut total = 0.0;
        for t in 0..j {
            for i in 0..n {
                let c = s.c[(i, t)];
                total += (f64::from(z[(i, t)]) + self.cache.gamma[(i, t)] - 1.0) * self.cache.log_c[(i, t)]
                    - c
                    - self.cache.ln_gamma[(i, t)];
            }
        }
        for i in 0..n {
            total += (data.row_totals()[i] as f64 - 1.0) * s.u[i].ln() - s.t[i] * s.u[i];
        }
        total += s.alpha.iter().map(|&a| normal_logpdf(a, self.hyper.sigma_alpha2)).sum::<f64>();
        for (phi, &zeta) in s.phi.iter().zip(s.zeta.iter()) {
            total += spike_slab_logprior(*phi, zeta, self.hyper.r2)
                + beta_binomial_logprior(zeta, self.hyper.a, self.hyper.b);
        }
        total
    }

    #[cfg(test)]
    pub(crate) fn cache_gamma(&self) -> &DMatrix<f64> {
        &self.cache.gamma
    }
}

/// Balances of the empirical composition `(z + 0.5) / sum`, zero-replaced and
/// optionally standardized.
pub fn empirical_balances(data: &Dataset, spec: &PartitionSpec, delta: f64, standardize: bool) -> Result<DMatrix<f64>> {
    let (n, j) = (data.n(), data.n_taxa());
    let mut psi = DMatrix::zeros(n, j);
    for i in 0..n {
        let row: Vec<f64> = data.z().row(i).iter().map(|&v| f64::from(v) + 0.5).collect();
        let total: f64 = row.iter().sum();
        let comp: Vec<f64> = row.iter().map(|v| v / total).collect();
        let rep = zero_replace(&comp, delta)?;
        for t in 0..j {
            psi[(i, t)] = rep[t];
        }
    }
    crate::model::balance_matrix(&psi, spec, standardize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_gamma, sbp_pivot};

    #[test]
    fn cached_concentrations_track_the_state() {
        let cfg = crate::simulation::SimConfig { n: 12, p: 4, j: 6, n_true_cov: 3, n_true_bal: 1, ..Default::default() };
        let rep = crate::simulation::gen_replicate(&cfg, &mut crate::simulation::replicate_rng(4, 0)).unwrap();
        let spec = sbp_pivot(6).unwrap();
        let config = SamplerConfig { init_zeta_frac: 0.2, between_moves_per_iter: 5, ..SamplerConfig::default() };
        let mut s = Sampler::new(&rep.train, Hyperparams::default(), &spec, config).unwrap();
        for _ in 0..200 {
            s.sweep().unwrap();
            s.state().check_invariants().unwrap();
        }
        let st = s.state();
        let fresh = build_gamma(&st.alpha, &st.phi, &st.zeta, rep.train.x()).unwrap();
        let rel = s.cache_gamma().zip_map(&fresh.gamma, |a, b| ((a - b) / b).abs()).max();
        assert!(rel < 1e-12, "{rel}");
    }
}
