//! Reference estimators reported alongside the product-marginal one.

use super::{batch_means, EvidenceReport, EvidenceTarget, LatentMode, PriorSampler};
use crate::chain::{ChainSample, Draw, Independence};
use crate::density::BlockDensity;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_jitter, ln_det, mean_cov};
use crate::math::{LogSumExp, LN_2PI};
use crate::models::regression::{RegressionModel, BETA, SIGMA2};
use crate::rng::RngState;

fn best_draw(chain: &ChainSample, log_post: &dyn Fn(&[f64]) -> f64) -> Result<(usize, f64)> {
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, row) in chain.rows().enumerate() {
        let v = log_post(row);
        if v > best.1 {
            best = (i, v);
        }
    }
    if !best.1.is_finite() {
        return Err(Error::Numerical("no draw has a finite log posterior".into()));
    }
    Ok(best)
}

/// Laplace-Metropolis approximation with the chain mean standing in for
/// the mode and the chain covariance for the inverse Hessian:
/// `(d/2) log 2pi + (1/2) log det S + log f(y|t) pi(t)` at the chain mean `t`.
pub fn laplace_metropolis(chain: &ChainSample, log_post: &dyn Fn(&[f64]) -> f64) -> Result<f64> {
    if chain.independence() != Independence::Joint {
        return Err(Error::Estimator("Laplace-Metropolis needs the joint chain".into()));
    }
    let d = chain.layout().total_dim();
    let (mean, cov) = mean_cov(chain.rows(), d);
    let ch = cholesky_jitter(&cov)?;
    let at_mean = log_post(mean.as_slice());
    if !at_mean.is_finite() {
        return Err(Error::Numerical("log posterior at the chain mean is not finite".into()));
    }
    Ok(0.5 * d as f64 * LN_2PI + 0.5 * ln_det(&ch) + at_mean)
}

/// Chib's candidate estimator for the conjugate regression model, with the
/// highest-posterior draw of a joint chain as the ordinate.
///
/// `log m = log f(y|t*) + log pi(t*) - log p(beta*|y) - log p(s2*|beta*,y)`,
/// the first ordinate Rao-Blackwellized over every chain variance draw and
/// the second exact.
pub fn chib_candidate_regression(model: &RegressionModel, chain: &ChainSample) -> Result<f64> {
    if chain.independence() != Independence::Joint {
        return Err(Error::Estimator("Chib's estimator needs the joint chain".into()));
    }
    let layout = chain.layout();
    let beta_r = layout.require(BETA)?.range();
    let s2_i = layout.require(SIGMA2)?.offset;
    let post = |row: &[f64]| model.log_likelihood(&row[beta_r.clone()], row[s2_i]) + model.log_prior(&row[beta_r.clone()], row[s2_i]);
    let (best, lp_max) = best_draw(chain, &post)?;
    let star = chain.row(best);
    let beta_star = &star[beta_r.clone()];
    let s2_star = star[s2_i];

    let mut acc = LogSumExp::default();
    for row in chain.rows() {
        acc.push(model.beta_conditional(row[s2_i]).ln_pdf(beta_star));
    }
    let ln_beta_ord = acc.value() - (chain.len() as f64).ln();
    let ln_s2_ord = model.sigma2_conditional(beta_star).ln_pdf(s2_star);
    Ok(lp_max - ln_beta_ord - ln_s2_ord)
}

/// Arithmetic mean of the likelihood over prior draws.
pub fn naive_prior_mc<M>(model: &M, n: usize, batches: usize, seed: u64) -> Result<EvidenceReport>
where
    M: PriorSampler + EvidenceTarget,
{
    let layout = model.layout();
    let mut rng = RngState::new(seed);
    let mut lw = Vec::with_capacity(n);
    for i in 0..n {
        let row = model.sample_prior(&mut rng);
        let draw = Draw {
            layout: &layout,
            values: &row,
            index: i,
        };
        let ll = model.log_likelihood(draw);
        lw.push(if ll.is_nan() { f64::NEG_INFINITY } else { ll });
    }
    let bm = batch_means(&lw, batches)?;
    Ok(EvidenceReport {
        estimator: "naive-prior-mc".into(),
        model: String::new(),
        n,
        batches,
        batch_size: bm.batch_size,
        log_evidence: bm.log_evidence,
        mc_error: Some(bm.mc_error),
        batch_estimates: bm.batch_estimates,
        mean_batch_log: Some(bm.mean_batch_log),
        densities: Vec::new(),
        latent: LatentMode::None,
        seed: Some(seed),
        skipped_draws: 0,
    })
}
