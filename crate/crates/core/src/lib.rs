//! Bayesian joint modeling of overdispersed taxa counts, covariates and a
//! continuous response.
//!
//! Counts follow a Dirichlet-multinomial regression on covariates with
//! spike-and-slab selection of covariate-taxon effects. The response is a
//! linear regression on isometric log-ratio balances of the latent
//! compositions, again with spike-and-slab selection. Both parts share the
//! compositions and are sampled jointly by Metropolis-Hastings within Gibbs.
//!
//! Alongside the sampler the crate provides out-of-sample prediction, a
//! two-step comparator, a synthetic data generator and selection metrics.

pub mod baselines;
pub mod error;
pub mod experiment;
pub mod io;
pub mod mcmc;
pub mod metrics;
pub mod model;
pub mod par;
pub mod prediction;
pub mod simulation;

pub use error::{Error, Result};
pub use mcmc::{run_chain, ChainOutput, Mode, SamplerConfig};
pub use model::{Dataset, Hyperparams, PartitionSpec};
