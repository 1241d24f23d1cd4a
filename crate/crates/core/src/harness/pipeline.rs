//! Sample, re-order, fit densities, estimate: the end-to-end runs behind
//! each case study.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ModelConfig, Reorder, SamplerConfig, Variant};
use super::datasets::{galaxy_velocities, load_bundled, Schema};
use crate::chain::{label_permute_mixture, random_permute, systematic_reorder, ChainSample, Independence};
use crate::density::{
    moment_matched_invgamma, moment_matched_normal, rao_blackwell, transformed_normal, joint_normal, MarginalDensity,
    ReducedSample, Transform,
};
use crate::error::{Error, Result};
use crate::estimators::{
    bias_correct_mixture, chib_candidate_regression, diffuse_prior_reuse, finite_variance_check, laplace_metropolis,
    naive_prior_mc, product_marginal_is, EstimatorInputs, EvidenceReport, EvidenceRun, LatentMode, VarianceDiagnostic,
};
use crate::models::mixture::{full_conditionals, LabelSymmetric, MixtureGibbs, MixtureModel, MixturePrior};
use crate::models::poisson::{
    DConditional, EtaConditional, HierarchicalTarget, IntegratedLikelihood, MarginalTarget, PoissonLongitudinalModel,
    PoissonPrior, PoissonSampler, B as RE_BLOCK, BETA as P_BETA, D as P_D, ETA as P_ETA,
};
use crate::models::regression::{
    wind_design, BetaConditional, RegressionGibbs, RegressionModel, Sigma2Conditional, BETA, SIGMA2,
};
use crate::models::run_chain;
use crate::rng::RngState;

/// Reduced sample sizes for Rao-Blackwellization.
pub const DEFAULT_L_REGRESSION: usize = 200;
pub const DEFAULT_L_MIXTURE: usize = 500;
pub const DEFAULT_L_POISSON: usize = 200;
/// Importance draws per subject for the integrated Poisson likelihood.
pub const DEFAULT_N_IS: usize = 100;

// sub-stream ids derived from an experiment seed
const STREAM_REORDER: u64 = 1;
const STREAM_REDUCED: u64 = 2;
const STREAM_RELABEL: u64 = 3;
const IS_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

fn stream(seed: u64, id: u64) -> RngState {
    RngState::stream(seed, id)
}

#[derive(Debug)]
pub enum LoadedModel {
    Regression(RegressionModel),
    Mixture(MixtureModel),
    Poisson(PoissonLongitudinalModel),
}

/// Reads the data set a model needs and builds the model.
pub fn build_model(cfg: &ModelConfig, data_dir: &Path) -> Result<LoadedModel> {
    match *cfg {
        ModelConfig::Regression { design, g, a0, b0 } => {
            let ds = load_bundled(data_dir, Schema::Wind)?;
            let x = wind_design(ds.column("wind_speed")?, design)?;
            let y = nalgebra::DVector::from_column_slice(ds.column("volts")?);
            Ok(LoadedModel::Regression(RegressionModel::new(x, y, g, a0, b0)?))
        }
        ModelConfig::Mixture { k, equal_variance } => {
            let ds = load_bundled(data_dir, Schema::Galaxy)?;
            let y = galaxy_velocities(&ds)?;
            Ok(LoadedModel::Mixture(MixtureModel::new(y, k, equal_variance, MixturePrior::default())?))
        }
        ModelConfig::Poisson { with_time_effect } => {
            let ds = load_bundled(data_dir, Schema::Epilepsy)?;
            Ok(LoadedModel::Poisson(PoissonLongitudinalModel::new(
                ds.subjects()?,
                with_time_effect,
                PoissonPrior::default(),
            )?))
        }
    }
}

/// Runs the model's sampler and returns the joint chain after burn-in.
pub fn sample_chain(model: &LoadedModel, s: &SamplerConfig) -> Result<ChainSample> {
    match model {
        LoadedModel::Regression(m) => {
            let mut sampler = RegressionGibbs { model: m };
            Ok(run_chain(&mut sampler, m.initial_state(), s.iterations, s.burn_in, s.seed)?.0)
        }
        LoadedModel::Mixture(m) => {
            let mut sampler = MixtureGibbs { model: m };
            Ok(run_chain(&mut sampler, m.initial_state(), s.iterations, s.burn_in, s.seed)?.0)
        }
        LoadedModel::Poisson(m) => {
            let mut sampler = PoissonSampler::new(m);
            let chain = run_chain(&mut sampler, m.initial_state(), s.iterations, s.burn_in, s.seed)?.0;
            let (ab, ar) = sampler.acceptance_rates();
            log::info!("acceptance rates after burn-in: beta {ab:.3}, random effects {ar:.3}");
            Ok(chain)
        }
    }
}

fn reorder(chain: &ChainSample, scheme: Reorder, seed: u64) -> ChainSample {
    match scheme {
        Reorder::Systematic => systematic_reorder(chain),
        Reorder::RandomPermute => random_permute(chain, &mut stream(seed, STREAM_REORDER)),
    }
}

/// Marginal posterior densities for the regression blocks.
pub fn regression_densities(
    model: &RegressionModel,
    chain: &ChainSample,
    variant: Variant,
    reduced_draws: usize,
    seed: u64,
) -> Result<Vec<MarginalDensity>> {
    match variant {
        Variant::Exact => {
            let (b, s) = model.exact_marginals()?;
            Ok(vec![b, s])
        }
        Variant::RaoBlackwell | Variant::PriorReuse => {
            let reduced = ReducedSample::draw(chain, reduced_draws, &mut stream(seed, STREAM_REDUCED))?;
            Ok(vec![
                rao_blackwell(BETA, &reduced, &BetaConditional(model))?,
                rao_blackwell(SIGMA2, &reduced, &Sigma2Conditional(model))?,
            ])
        }
        Variant::Moment => Ok(vec![
            moment_matched_normal(chain, BETA)?,
            moment_matched_invgamma(&chain.column(SIGMA2, 0)?, SIGMA2)?,
        ]),
        Variant::TransformedNormal => Ok(vec![
            moment_matched_normal(chain, BETA)?,
            transformed_normal(chain, SIGMA2, Transform::Log)?,
        ]),
        other => Err(Error::config(
            "estimator.variants",
            format!("`{}` is not a density-based regression variant", other.label()),
        )),
    }
}

/// Product-marginal estimate for a regression model from its joint chain.
pub fn regression_product(
    model: &RegressionModel,
    chain: &ChainSample,
    variant: Variant,
    batches: usize,
    reduced_draws: usize,
    seed: u64,
    scheme: Reorder,
) -> Result<EvidenceRun> {
    let densities = regression_densities(model, chain, variant, reduced_draws, seed).map_err(|e| e.in_stage("densities"))?;
    let reordered = reorder(chain, scheme, seed);
    let inputs = EstimatorInputs::new(&reordered, densities, model, batches)?.seed(seed);
    let mut run = product_marginal_is(&inputs).map_err(|e| e.in_stage("estimate"))?;
    run.report.estimator = variant.label().into();
    Ok(run)
}

/// Product-marginal estimate for a mixture. With `relabel` the chain's
/// component labels are randomly permuted at every draw first, so the
/// estimate needs no label-switching correction.
pub fn mixture_product(
    model: &MixtureModel,
    chain: &ChainSample,
    relabel: bool,
    batches: usize,
    reduced_draws: usize,
    seed: u64,
    scheme: Reorder,
) -> Result<EvidenceReport> {
    let relabelled;
    let joint = if relabel {
        relabelled = label_permute_mixture(chain, model.k(), &mut stream(seed, STREAM_RELABEL))
            .map_err(|e| e.in_stage("relabel"))?;
        &relabelled
    } else {
        chain
    };
    let reduced = ReducedSample::draw(joint, reduced_draws, &mut stream(seed, STREAM_REDUCED))?;
    let densities = full_conditionals(model)
        .into_iter()
        .map(|c| {
            // the relabelled posterior is label symmetric, and so is the estimate
            let c = if relabel { Box::new(LabelSymmetric::new(c, model.k())) } else { c };
            rao_blackwell(c.block(), &reduced, c.as_ref())
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("densities"))?;
    let params = joint.select(&model.parameter_blocks())?;
    let reordered = reorder(&params, scheme, seed);
    let inputs = EstimatorInputs::new(&reordered, densities, model, batches)?.seed(seed);
    let mut report = product_marginal_is(&inputs).map_err(|e| e.in_stage("estimate"))?.report;
    report.estimator = if relabel { Variant::RandomPermutation } else { Variant::Simple }.label().into();
    Ok(report)
}

/// Product-marginal estimate for the Poisson model: three blocks with the
/// random effects integrated out by importance sampling, or four blocks
/// with the random effects as a block of their own.
#[allow(clippy::too_many_arguments)]
pub fn poisson_product(
    model: &PoissonLongitudinalModel,
    chain: &ChainSample,
    four_block: bool,
    batches: usize,
    reduced_draws: usize,
    n_is: usize,
    seed: u64,
    scheme: Reorder,
) -> Result<EvidenceReport> {
    let reduced = ReducedSample::draw(chain, reduced_draws, &mut stream(seed, STREAM_REDUCED))?;
    let mut densities = vec![
        moment_matched_normal(chain, P_BETA)?,
        rao_blackwell(P_ETA, &reduced, &EtaConditional(model))?,
        rao_blackwell(P_D, &reduced, &DConditional(model))?,
    ];
    let report = if four_block {
        densities.push(joint_normal(chain, RE_BLOCK).map_err(|e| e.in_stage("densities"))?);
        let reordered = reorder(chain, scheme, seed);
        let target = HierarchicalTarget(model);
        let inputs = EstimatorInputs::new(&reordered, densities, &target, batches)?
            .seed(seed)
            .latent(LatentMode::Hierarchical);
        product_marginal_is(&inputs).map_err(|e| e.in_stage("estimate"))?.report
    } else {
        let lik = IntegratedLikelihood::from_chain(model, chain, n_is, seed ^ IS_SEED_OFFSET)?;
        let target = MarginalTarget(lik);
        let params = chain.select(&[P_BETA, P_ETA, P_D])?;
        let reordered = reorder(&params, scheme, seed);
        let inputs = EstimatorInputs::new(&reordered, densities, &target, batches)?
            .seed(seed)
            .latent(LatentMode::Marginalized);
        product_marginal_is(&inputs).map_err(|e| e.in_stage("estimate"))?.report
    };
    Ok(EvidenceReport {
        estimator: if four_block { Variant::FourBlock } else { Variant::ThreeBlock }.label().into(),
        ..report
    })
}

/// Runs every requested variant on an already sampled joint chain.
pub fn estimate_from_chain(model: &LoadedModel, cfg: &ExperimentConfig, chain: &ChainSample) -> Result<Vec<EvidenceReport>> {
    if chain.independence() != Independence::Joint {
        return Err(Error::Chain("estimation starts from the joint chain as sampled".into()));
    }
    log::info!("{}: estimating from {} draws", cfg.name, chain.len());
    let e = &cfg.estimator;
    let seed = cfg.sampler.seed;
    let scheme = e.reorder.unwrap_or(Reorder::Systematic);
    let mut out = Vec::new();
    // re-weighted rows already name their own g and take no suffix
    let mut reweighted = Vec::new();
    match model {
        LoadedModel::Regression(m) => {
            let l = e.reduced_draws.unwrap_or(DEFAULT_L_REGRESSION);
            for &v in &e.variants {
                match v {
                    Variant::Target => out.push(EvidenceReport::point(v.label(), "", m.exact_log_evidence())),
                    Variant::Exact | Variant::RaoBlackwell | Variant::Moment | Variant::TransformedNormal => {
                        out.push(regression_product(m, chain, v, e.batches, l, seed, scheme)?.report)
                    }
                    Variant::PriorReuse => {
                        let base = regression_product(m, chain, Variant::RaoBlackwell, e.batches, l, seed, scheme)?;
                        let reordered = reorder(chain, scheme, seed);
                        for &g in &e.reuse_g {
                            let other = m.with_g(g)?;
                            let mut r = diffuse_prior_reuse(&base, &reordered, &other, &cfg.name)
                                .map_err(|err| err.in_stage("prior-reuse"))?;
                            r.estimator = format!("{} g={g}", v.label());
                            if e.variants.contains(&Variant::Target) {
                                let label = format!("{} g={g}", Variant::Target.label());
                                reweighted.push(out.len());
                                out.push(EvidenceReport::point(&label, "", other.exact_log_evidence()));
                            }
                            reweighted.push(out.len());
                            out.push(r);
                        }
                    }
                    Variant::LaplaceMetropolis => {
                        let (b, s) = (m.layout().require(BETA)?.range(), m.layout().require(SIGMA2)?.offset);
                        let lp = |row: &[f64]| m.log_likelihood(&row[b.clone()], row[s]) + m.log_prior(&row[b.clone()], row[s]);
                        out.push(EvidenceReport::point(v.label(), "", laplace_metropolis(chain, &lp)?));
                    }
                    Variant::Chib => out.push(EvidenceReport::point(v.label(), "", chib_candidate_regression(m, chain)?)),
                    Variant::NaivePriorMc => {
                        let n = e.naive_draws.unwrap_or(chain.len() / e.batches * e.batches);
                        let mut r = naive_prior_mc(m, n, e.batches, seed.wrapping_add(IS_SEED_OFFSET))?;
                        r.estimator = v.label().into();
                        out.push(r);
                    }
                    _ => unreachable!("validated against the model family"),
                }
            }
        }
        LoadedModel::Mixture(m) => {
            let l = e.reduced_draws.unwrap_or(DEFAULT_L_MIXTURE);
            let mut simple: Option<EvidenceReport> = None;
            for &v in &e.variants {
                match v {
                    Variant::Simple | Variant::BiasCorrected => {
                        if simple.is_none() {
                            simple = Some(mixture_product(m, chain, false, e.batches, l, seed, scheme)?);
                        }
                        let s = simple.as_ref().unwrap();
                        out.push(if v == Variant::Simple {
                            s.clone()
                        } else {
                            EvidenceReport {
                                estimator: v.label().into(),
                                ..bias_correct_mixture(s, m.k())
                            }
                        });
                    }
                    Variant::RandomPermutation => out.push(mixture_product(m, chain, true, e.batches, l, seed, scheme)?),
                    _ => unreachable!("validated against the model family"),
                }
            }
        }
        LoadedModel::Poisson(m) => {
            let l = e.reduced_draws.unwrap_or(DEFAULT_L_POISSON);
            let n_is = e.n_is.unwrap_or(DEFAULT_N_IS);
            for &v in &e.variants {
                let four = match v {
                    Variant::ThreeBlock => false,
                    Variant::FourBlock => true,
                    _ => unreachable!("validated against the model family"),
                };
                out.push(poisson_product(m, chain, four, e.batches, l, n_is, seed, scheme)?);
            }
        }
    }
    for (i, r) in out.iter_mut().enumerate() {
        if let Some(suffix) = e.label_suffix.as_ref().filter(|_| !reweighted.contains(&i)) {
            r.estimator = format!("{} {suffix}", r.estimator);
        }
        r.model = cfg.name.clone();
        r.seed.get_or_insert(seed);
    }
    Ok(out)
}

/// Loads data, samples, and estimates every requested variant.
pub fn run_experiment(cfg: &ExperimentConfig, data_dir: &Path) -> Result<Vec<EvidenceReport>> {
    cfg.validate()?;
    let model = build_model(&cfg.model, data_dir).map_err(|e| e.in_stage("load"))?;
    let chain = sample_chain(&model, &cfg.sampler).map_err(|e| e.in_stage("sample"))?;
    estimate_from_chain(&model, cfg, &chain)
}

/// Error-ratio diagnostic for one variant of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub model: String,
    pub estimator: String,
    #[serde(flatten)]
    pub diagnostic: VarianceDiagnostic,
}

/// Runs each variant at the configured chain length `N` and at `2N`, with
/// a fresh seed for the longer run.
pub fn diagnose_variance(cfg: &ExperimentConfig, data_dir: &Path) -> Result<Vec<VarianceRow>> {
    cfg.validate()?;
    let model = build_model(&cfg.model, data_dir).map_err(|e| e.in_stage("load"))?;
    let n = cfg.sampler.kept();
    let mut rows = Vec::new();
    for &v in &cfg.estimator.variants {
        let mut single = cfg.clone();
        single.estimator.variants = vec![v];
        let diagnostic = finite_variance_check(n, |size| {
            let mut c = single.clone();
            c.sampler.iterations = c.sampler.burn_in + size;
            if size != n {
                c.sampler.seed = c.sampler.seed.wrapping_add(1);
            }
            let chain = sample_chain(&model, &c.sampler).map_err(|e| e.in_stage("sample"))?;
            let mut reports = estimate_from_chain(&model, &c, &chain)?;
            reports
                .pop()
                .ok_or_else(|| Error::Estimator("variant produced no report".into()))
        })?;
        rows.push(VarianceRow {
            model: cfg.name.clone(),
            estimator: v.label().into(),
            diagnostic,
        });
    }
    Ok(rows)
}
