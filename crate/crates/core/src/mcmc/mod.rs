//! Metropolis-Hastings within Gibbs sampling for the joint model.

pub(crate) mod chain;
mod config;
mod sampler;
mod state;

pub use chain::{mppi, run_chain, run_chains_shared, ChainOutput, EffectSample};
pub use config::{Mode, SamplerConfig};
pub use sampler::{empirical_balances, AcceptanceCounts, MoveCounter, Sampler};
pub use state::ChainState;
