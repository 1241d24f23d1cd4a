use rayon::prelude::*;

use super::{batch_means, EvidenceReport, EvidenceTarget, LatentMode};
use crate::chain::{ChainSample, Independence};
use crate::density::MarginalDensity;
use crate::error::{Error, Result};
use crate::math::ln_factorial;

/// Largest tolerated fraction of draws whose denominator density is not
/// finite.
pub const MAX_SKIPPED_FRACTION: f64 = 1e-3;

/// Everything the product-marginal estimator needs, validated up front.
pub struct EstimatorInputs<'a> {
    chain: &'a ChainSample,
    densities: Vec<MarginalDensity>,
    target: &'a dyn EvidenceTarget,
    batches: usize,
    model: String,
    latent: LatentMode,
    seed: Option<u64>,
}

impl<'a> EstimatorInputs<'a> {
    /// `chain` must be block-independent and carry exactly the blocks that
    /// `densities` cover, one density per block.
    pub fn new(
        chain: &'a ChainSample,
        densities: Vec<MarginalDensity>,
        target: &'a dyn EvidenceTarget,
        batches: usize,
    ) -> Result<Self> {
        if chain.independence() != Independence::BlockIndependent {
            return Err(Error::Estimator(
                "the estimator needs a re-ordered (block-independent) chain".into(),
            ));
        }
        let layout = chain.layout();
        for block in layout.blocks() {
            let count = densities.iter().filter(|d| d.block() == block.name).count();
            if count != 1 {
                return Err(Error::Estimator(format!(
                    "block `{}` has {count} marginal densities; exactly one is required",
                    block.name
                )));
            }
        }
        if let Some(d) = densities.iter().find(|d| layout.get(d.block()).is_none()) {
            return Err(Error::Estimator(format!("density given for unknown block `{}`", d.block())));
        }
        if batches < 2 || batches > chain.len() {
            return Err(Error::config(
                "estimator.batches",
                format!("{batches} batches for {} draws", chain.len()),
            ));
        }
        // keep densities in layout order
        let mut ordered = Vec::with_capacity(densities.len());
        for block in layout.blocks() {
            ordered.push(densities.iter().find(|d| d.block() == block.name).unwrap().clone());
        }
        Ok(Self {
            chain,
            densities: ordered,
            target,
            batches,
            model: String::new(),
            latent: LatentMode::None,
            seed: None,
        })
    }

    pub fn model(mut self, name: impl Into<String>) -> Self {
        self.model = name.into();
        self
    }

    pub fn latent(mut self, mode: LatentMode) -> Self {
        self.latent = mode;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

/// Per-draw pieces of the log weights, kept so another prior can reuse
/// them without touching the likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightCache {
    pub log_likelihood: Vec<f64>,
    pub log_prior: Vec<f64>,
    /// `sum_b log p_b(theta_b | y)`; NaN marks a skipped draw.
    pub log_density: Vec<f64>,
}

impl WeightCache {
    pub fn len(&self) -> usize {
        self.log_density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_density.is_empty()
    }

    pub fn log_weights(&self) -> Vec<f64> {
        self.log_likelihood
            .iter()
            .zip(&self.log_prior)
            .zip(&self.log_density)
            .map(|((l, p), d)| weight(*l, *p, *d))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct EvidenceRun {
    pub report: EvidenceReport,
    pub cache: WeightCache,
}

fn weight(ll: f64, lp: f64, ld: f64) -> f64 {
    if !ld.is_finite() || ll.is_nan() || lp.is_nan() {
        f64::NAN
    } else {
        ll + lp - ld
    }
}

fn usable_len(n: usize, batches: usize) -> usize {
    let used = n / batches * batches;
    if used < n {
        log::warn!("dropping {} trailing draws so {batches} batches have equal size", n - used);
    }
    used
}

fn check_skipped(skipped: usize, n: usize) -> Result<()> {
    if skipped > 0 {
        log::warn!("{skipped} of {n} draws had a non-finite weight and were skipped");
    }
    if skipped as f64 > MAX_SKIPPED_FRACTION * n as f64 {
        return Err(Error::Estimator(format!(
            "{skipped} of {n} draws skipped; more than {:.1}% is treated as a failure",
            100.0 * MAX_SKIPPED_FRACTION
        )));
    }
    Ok(())
}

/// The product-of-marginal-posteriors importance sampling estimate of
/// `log m(y)`.
pub fn product_marginal_is(inputs: &EstimatorInputs<'_>) -> Result<EvidenceRun> {
    let chain = inputs.chain;
    let n = usable_len(chain.len(), inputs.batches);
    let offsets: Vec<_> = chain.layout().blocks().iter().map(|b| b.range()).collect();

    let parts: Vec<(f64, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let draw = chain.draw(i);
            let row = chain.row(i);
            let ld: f64 = inputs
                .densities
                .iter()
                .zip(&offsets)
                .map(|(d, r)| d.ln_pdf(&row[r.clone()]))
                .sum();
            let ll = inputs.target.log_likelihood(draw);
            let lp = inputs.target.log_prior(draw);
            (ll, lp, if ld.is_finite() { ld } else { f64::NAN })
        })
        .collect();

    let cache = WeightCache {
        log_likelihood: parts.iter().map(|p| p.0).collect(),
        log_prior: parts.iter().map(|p| p.1).collect(),
        log_density: parts.iter().map(|p| p.2).collect(),
    };
    let log_w = cache.log_weights();
    let bm = batch_means(&log_w, inputs.batches)?;
    check_skipped(bm.skipped, n)?;
    let ess = effective_sample_size(&log_w);
    if ess < 0.01 * n as f64 {
        let prefix = if inputs.model.is_empty() { String::new() } else { format!("{}: ", inputs.model) };
        log::warn!("{prefix}importance weights are dominated by a few draws (effective sample size {ess:.1} of {n})");
    }

    let report = EvidenceReport {
        estimator: "product-marginal-is".into(),
        model: inputs.model.clone(),
        n,
        batches: inputs.batches,
        batch_size: bm.batch_size,
        log_evidence: bm.log_evidence,
        mc_error: Some(bm.mc_error),
        batch_estimates: bm.batch_estimates,
        mean_batch_log: Some(bm.mean_batch_log),
        densities: inputs.densities.iter().map(|d| d.summary()).collect(),
        latent: inputs.latent,
        seed: inputs.seed,
        skipped_draws: bm.skipped,
    };
    Ok(EvidenceRun { report, cache })
}

/// Kish effective sample size `(sum w)^2 / sum w^2`; NaN weights are
/// ignored.
pub fn effective_sample_size(log_weights: &[f64]) -> f64 {
    let max = log_weights.iter().copied().filter(|v| !v.is_nan()).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return 0.0;
    }
    let (s1, s2) = log_weights
        .iter()
        .filter(|v| !v.is_nan())
        .map(|v| (v - max).exp())
        .fold((0.0, 0.0), |(a, b), w| (a + w, b + w * w));
    s1 * s1 / s2
}

/// Re-weights a finished run under a different prior.
///
/// The draws, likelihood values and marginal densities are reused as they
/// are; only the prior term of each weight is recomputed. `chain` must be
/// the chain the run was computed on.
pub fn diffuse_prior_reuse(
    run: &EvidenceRun,
    chain: &ChainSample,
    new_prior: &dyn EvidenceTarget,
    model: &str,
) -> Result<EvidenceReport> {
    let n = run.cache.len();
    if chain.len() < n {
        return Err(Error::Estimator(format!(
            "run used {n} draws but the chain has only {}",
            chain.len()
        )));
    }
    let log_prior: Vec<f64> = (0..n).into_par_iter().map(|i| new_prior.log_prior(chain.draw(i))).collect();
    let cache = WeightCache {
        log_likelihood: run.cache.log_likelihood.clone(),
        log_prior,
        log_density: run.cache.log_density.clone(),
    };
    let batches = run.report.batches;
    let bm = batch_means(&cache.log_weights(), batches)?;
    check_skipped(bm.skipped, n)?;
    Ok(EvidenceReport {
        estimator: "diffuse-prior-reuse".into(),
        model: model.into(),
        n,
        batches,
        batch_size: bm.batch_size,
        log_evidence: bm.log_evidence,
        mc_error: Some(bm.mc_error),
        batch_estimates: bm.batch_estimates,
        mean_batch_log: Some(bm.mean_batch_log),
        densities: run.report.densities.clone(),
        latent: run.report.latent,
        seed: run.report.seed,
        skipped_draws: bm.skipped,
    })
}

/// Adds `log k!` to an estimate built from a chain that never switched
/// labels, so that it targets the evidence of the symmetric posterior.
/// The error is unchanged.
pub fn bias_correct_mixture(report: &EvidenceReport, k: usize) -> EvidenceReport {
    let shift = ln_factorial(k as u64);
    let mut out = report.clone();
    out.estimator = format!("{}-bias-corrected", report.estimator);
    out.log_evidence += shift;
    for b in &mut out.batch_estimates {
        *b += shift;
    }
    out.mean_batch_log = report.mean_batch_log.map(|m| m + shift);
    out
}
