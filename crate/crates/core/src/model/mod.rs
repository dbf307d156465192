//! The mathematical kernel: data containers, hyperparameters, the augmented
//! Dirichlet-multinomial likelihood, balance geometry and the collapsed
//! marginal of the response.
//!
//! Everything here is a pure function of its inputs.

mod balance;
mod dataset;
mod gamma;
mod hyper;
mod marginal;
mod prior;

pub use balance::{
    balance_matrix, balance_value, sbp_pivot, standardize_columns, zero_replace, ColumnScaling,
    Partition, PartitionSpec,
};
pub(crate) use balance::zero_replaced_log_into;
pub use dataset::{Dataset, Preprocessing};
pub use gamma::{build_gamma, log_augmented_dm, GammaField};
pub use hyper::Hyperparams;
pub use marginal::{log_marginal_y, log_marginal_y_columns};
pub use prior::{beta_binomial_logprior, normal_logpdf, spike_slab_logprior};
