//! Marginal likelihood estimation with importance sampling from the
//! product of marginal posteriors.
//!
//! The pipeline is: run an MCMC sampler for a model ([`models`]), store the
//! draws as a [`chain::ChainSample`], re-order the blocks so rows come from
//! the product of the block marginals, fit a [`density::MarginalDensity`]
//! per block, and average the importance weights
//! ([`estimators::product_marginal_is`]).

pub mod chain;
pub mod density;
pub mod distributions;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod math;
pub mod models;
pub mod rng;

#[cfg(test)]
mod test_util;

pub use error::{Error, Result};
