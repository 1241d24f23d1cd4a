//! Evidence estimators: the product-marginal importance sampler, its
//! batch-means error, prior reuse, and the comparators used in the tables.

use serde::{Deserialize, Serialize};

use crate::chain::{BlockLayout, Draw};
use crate::density::DensitySummary;
use crate::rng::RngState;

mod batch;
mod comparators;
mod diagnostics;
mod product;

pub use batch::{batch_means, BatchMeans};
pub use comparators::{chib_candidate_regression, laplace_metropolis, naive_prior_mc};
pub use diagnostics::{finite_variance_check, VarianceDiagnostic, RATIO_BAND};
pub use product::{
    bias_correct_mixture, effective_sample_size, diffuse_prior_reuse, product_marginal_is, EstimatorInputs, EvidenceRun, WeightCache,
    MAX_SKIPPED_FRACTION,
};

/// Unnormalized log posterior split into likelihood and prior.
pub trait EvidenceTarget: Send + Sync {
    fn log_likelihood(&self, draw: Draw<'_>) -> f64;
    fn log_prior(&self, draw: Draw<'_>) -> f64;
}

/// Draws parameters from the prior, for the naive Monte Carlo comparator.
pub trait PriorSampler {
    fn layout(&self) -> BlockLayout;
    fn sample_prior(&self, rng: &mut RngState) -> Vec<f64>;
}

/// How latent variables enter the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentMode {
    /// No latent variables.
    None,
    /// The likelihood integrates the latent variables out.
    Marginalized,
    /// Latent variables are a block of their own with a density and a prior.
    Hierarchical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceReport {
    pub estimator: String,
    pub model: String,
    pub n: usize,
    pub batches: usize,
    pub batch_size: usize,
    pub log_evidence: f64,
    /// Standard error of `log_evidence`; `None` when it is not computed.
    pub mc_error: Option<f64>,
    pub batch_estimates: Vec<f64>,
    /// Average of the per-batch log estimates.
    pub mean_batch_log: Option<f64>,
    pub densities: Vec<DensitySummary>,
    pub latent: LatentMode,
    pub seed: Option<u64>,
    pub skipped_draws: usize,
}

impl EvidenceReport {
    /// A report for a single-number estimate with no batch structure.
    pub fn point(estimator: &str, model: &str, log_evidence: f64) -> Self {
        Self {
            estimator: estimator.into(),
            model: model.into(),
            n: 0,
            batches: 0,
            batch_size: 0,
            log_evidence,
            mc_error: None,
            batch_estimates: Vec::new(),
            mean_batch_log: None,
            densities: Vec::new(),
            latent: LatentMode::None,
            seed: None,
            skipped_draws: 0,
        }
    }
}
