//! Per-block marginal posterior densities used as the denominator of the
//! product-marginal importance weights.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::chain::{ChainSample, Draw, Independence};
use crate::distributions::{Dirichlet, InverseGamma, InverseWishart, MvNormal, MvStudentT};
use crate::error::{Error, Result};
use crate::linalg::mean_cov;
use crate::math::{mean, variance, LogSumExp};

/// Something that can evaluate a log-density at a block value.
pub trait BlockDensity: Send + Sync {
    fn ln_pdf(&self, x: &[f64]) -> f64;
}

impl BlockDensity for MvNormal {
    fn ln_pdf(&self, x: &[f64]) -> f64 {
        MvNormal::ln_pdf(self, x)
    }
}

impl BlockDensity for MvStudentT {
    fn ln_pdf(&self, x: &[f64]) -> f64 {
        MvStudentT::ln_pdf(self, x)
    }
}

impl BlockDensity for InverseGamma {
    fn ln_pdf(&self, x: &[f64]) -> f64 {
        InverseGamma::ln_pdf(self, x[0])
    }
}

impl BlockDensity for Dirichlet {
    fn ln_pdf(&self, x: &[f64]) -> f64 {
        Dirichlet::ln_pdf(self, x)
    }
}

impl BlockDensity for InverseWishart {
    fn ln_pdf(&self, x: &[f64]) -> f64 {
        self.ln_pdf_vech(x)
    }
}

/// Univariate normal, cheaper than a 1x1 `MvNormal`.
#[derive(Debug, Clone, Copy)]
pub struct Normal1 {
    pub mean: f64,
    pub var: f64,
}

impl BlockDensity for Normal1 {
    fn ln_pdf(&self, x: &[f64]) -> f64 {
        crate::distributions::ln_pdf_normal(x[0], self.mean, self.var)
    }
}

/// An exact full conditional `p(theta_b | rest, y)` of one block.
///
/// `given` extracts whatever the conditional needs from a joint draw
/// (its sufficient statistics) and returns a ready-to-evaluate density,
/// so the work is done once per reduced draw rather than once per
/// evaluation point.
pub trait FullConditional: Send + Sync {
    fn block(&self) -> &str;
    fn given(&self, draw: Draw<'_>) -> Result<Box<dyn BlockDensity>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityKind {
    Exact,
    RaoBlackwell,
    MomentNormal,
    MomentInvgamma,
    TransformedNormal,
    JointNormal,
}

impl fmt::Display for DensityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DensityKind::Exact => "exact",
            DensityKind::RaoBlackwell => "rao-blackwell",
            DensityKind::MomentNormal => "moment-normal",
            DensityKind::MomentInvgamma => "moment-invgamma",
            DensityKind::TransformedNormal => "transformed-normal",
            DensityKind::JointNormal => "joint-normal",
        };
        f.write_str(s)
    }
}

/// Reportable description of a fitted density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySummary {
    pub block: String,
    pub kind: DensityKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reduced_draws: Option<usize>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null", default)]
    pub params: serde_json::Value,
}

#[derive(Clone)]
pub struct MarginalDensity {
    block: String,
    kind: DensityKind,
    eval: Arc<dyn BlockDensity>,
    source_indices: Vec<usize>,
    params: serde_json::Value,
}

impl fmt::Debug for MarginalDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MarginalDensity")
            .field("block", &self.block)
            .field("kind", &self.kind)
            .field("reduced_draws", &self.source_indices.len())
            .finish()
    }
}

impl MarginalDensity {
    /// Wraps a closed-form marginal.
    pub fn exact(block: impl Into<String>, density: impl BlockDensity + 'static, params: serde_json::Value) -> Self {
        Self {
            block: block.into(),
            kind: DensityKind::Exact,
            eval: Arc::new(density),
            source_indices: Vec::new(),
            params,
        }
    }

    pub fn block(&self) -> &str {
        &self.block
    }

    pub fn kind(&self) -> DensityKind {
        self.kind
    }

    /// Indices into the source chain of the draws a Rao-Blackwell estimate
    /// averages over; empty for other kinds.
    pub fn source_indices(&self) -> &[usize] {
        &self.source_indices
    }

    pub fn ln_pdf(&self, x: &[f64]) -> f64 {
        self.eval.ln_pdf(x)
    }

    pub fn summary(&self) -> DensitySummary {
        DensitySummary {
            block: self.block.clone(),
            kind: self.kind,
            reduced_draws: (self.kind == DensityKind::RaoBlackwell).then_some(self.source_indices.len()),
            params: self.params.clone(),
        }
    }
}

/// `L` draws taken from a joint (never re-ordered) chain.
#[derive(Debug, Clone)]
pub struct ReducedSample {
    chain: ChainSample,
    indices: Vec<usize>,
}

impl ReducedSample {
    /// Picks `l` rows uniformly without replacement.
    pub fn draw<R: Rng + ?Sized>(chain: &ChainSample, l: usize, rng: &mut R) -> Result<Self> {
        if chain.independence() != Independence::Joint {
            return Err(Error::Estimator(
                "Rao-Blackwell draws must come from the joint chain, not a re-ordered one".into(),
            ));
        }
        if l == 0 || l > chain.len() {
            return Err(Error::Estimator(format!(
                "cannot take {l} reduced draws from a chain of {}",
                chain.len()
            )));
        }
        let mut indices = sample_indices(rng, chain.len(), l).into_vec();
        indices.sort_unstable();
        Ok(Self {
            chain: chain.clone(),
            indices,
        })
    }

    /// Uses the given rows.
    pub fn from_indices(chain: &ChainSample, indices: Vec<usize>) -> Result<Self> {
        if chain.independence() != Independence::Joint {
            return Err(Error::Estimator(
                "Rao-Blackwell draws must come from the joint chain, not a re-ordered one".into(),
            ));
        }
        if indices.is_empty() || indices.iter().any(|&i| i >= chain.len()) {
            return Err(Error::Estimator("reduced sample indices out of range".into()));
        }
        Ok(Self {
            chain: chain.clone(),
            indices,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn draws(&self) -> impl Iterator<Item = Draw<'_>> {
        self.indices.iter().map(|&i| self.chain.draw(i))
    }
}

struct RaoBlackwellDensity {
    parts: Vec<Box<dyn BlockDensity>>,
    ln_l: f64,
}

impl BlockDensity for RaoBlackwellDensity {
    fn ln_pdf(&self, x: &[f64]) -> f64 {
        let mut acc = LogSumExp::default();
        for p in &self.parts {
            acc.push(p.ln_pdf(x));
        }
        acc.value() - self.ln_l
    }
}

/// `log( L^{-1} sum_l p(theta_b | rest^(l), y) )`.
pub fn rao_blackwell(block: &str, reduced: &ReducedSample, cond: &dyn FullConditional) -> Result<MarginalDensity> {
    if cond.block() != block {
        return Err(Error::Estimator(format!(
            "conditional for `{}` cannot estimate block `{block}`",
            cond.block()
        )));
    }
    if reduced.chain.layout().get(block).is_none() {
        return Err(Error::Estimator(format!("reduced sample has no block `{block}`")));
    }
    let parts = reduced.draws().map(|d| cond.given(d)).collect::<Result<Vec<_>>>()?;
    Ok(MarginalDensity {
        block: block.to_string(),
        kind: DensityKind::RaoBlackwell,
        eval: Arc::new(RaoBlackwellDensity {
            ln_l: (parts.len() as f64).ln(),
            parts,
        }),
        source_indices: reduced.indices.clone(),
        params: serde_json::Value::Null,
    })
}

fn fit_normal<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, p: usize) -> Result<(MvNormal, serde_json::Value)> {
    let n = rows.clone().count();
    if n < 2 {
        return Err(Error::Estimator("moment matching needs at least two draws".into()));
    }
    let (m, cov) = mean_cov(rows, p);
    let mvn = MvNormal::new(m.clone(), cov)?;
    let params = if p <= 4 {
        json!({ "mean": m.as_slice(), "cov": mvn.cov().row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>() })
    } else {
        json!({ "dim": p })
    };
    Ok((mvn, params))
}

/// Normal with the chain mean and covariance of the block.
pub fn moment_matched_normal(chain: &ChainSample, block: &str) -> Result<MarginalDensity> {
    let width = chain.layout().require(block)?.width;
    let (mvn, params) = fit_normal(chain.block_rows(block)?, width)?;
    Ok(MarginalDensity {
        block: block.to_string(),
        kind: DensityKind::MomentNormal,
        eval: Arc::new(mvn),
        source_indices: Vec::new(),
        params,
    })
}

/// The same moment-matched normal, labelled as the high-dimensional joint
/// approximation of a latent block.
pub fn joint_normal(chain: &ChainSample, block: &str) -> Result<MarginalDensity> {
    let mut d = moment_matched_normal(chain, block)?;
    d.kind = DensityKind::JointNormal;
    Ok(d)
}

/// Inverse-gamma matched to the sample mean `m` and variance `v`:
/// `alpha = m^2 / v + 2`, `beta = m (alpha - 1)`.
pub fn moment_matched_invgamma(draws: &[f64], block: &str) -> Result<MarginalDensity> {
    if draws.len() < 2 {
        return Err(Error::Estimator("moment matching needs at least two draws".into()));
    }
    if draws.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::domain("inverse-gamma moment matching needs positive draws"));
    }
    let m = mean(draws);
    let v = variance(draws);
    if !(v > 0.0) {
        return Err(Error::domain("inverse-gamma moment matching needs positive variance"));
    }
    let shape = m * m / v + 2.0;
    let rate = m * (shape - 1.0);
    let ig = InverseGamma::new(shape, rate)?;
    Ok(MarginalDensity {
        block: block.to_string(),
        kind: DensityKind::MomentInvgamma,
        eval: Arc::new(ig),
        source_indices: Vec::new(),
        params: json!({ "shape": shape, "rate": rate }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Log,
    Logit,
}

impl Transform {
    fn forward(self, x: f64) -> Option<f64> {
        match self {
            Transform::Log if x > 0.0 => Some(x.ln()),
            Transform::Logit if x > 0.0 && x < 1.0 => Some((x / (1.0 - x)).ln()),
            _ => None,
        }
    }

    /// `log |dt/dx|`.
    fn ln_jacobian(self, x: f64) -> f64 {
        match self {
            Transform::Log => -x.ln(),
            Transform::Logit => -(x.ln() + (1.0 - x).ln()),
        }
    }
}

struct TransformedNormalDensity {
    normal: MvNormal,
    transform: Transform,
}

impl BlockDensity for TransformedNormalDensity {
    fn ln_pdf(&self, x: &[f64]) -> f64 {
        let mut t = Vec::with_capacity(x.len());
        let mut jac = 0.0;
        for &xi in x {
            match self.transform.forward(xi) {
                Some(v) => {
                    t.push(v);
                    jac += self.transform.ln_jacobian(xi);
                }
                None => return f64::NEG_INFINITY,
            }
        }
        self.normal.ln_pdf(&t) + jac
    }
}

/// Normal fit on elementwise-transformed draws; the density of the
/// original block includes the Jacobian of the transform.
pub fn transformed_normal(chain: &ChainSample, block: &str, transform: Transform) -> Result<MarginalDensity> {
    let width = chain.layout().require(block)?.width;
    let transformed: Vec<Vec<f64>> = chain
        .block_rows(block)?
        .map(|r| {
            r.iter()
                .map(|&x| {
                    transform
                        .forward(x)
                        .ok_or_else(|| Error::domain(format!("{x} is outside the domain of the {transform:?} transform")))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let (normal, params) = fit_normal(transformed.iter().map(|r| r.as_slice()), width)?;
    Ok(MarginalDensity {
        block: block.to_string(),
        kind: DensityKind::TransformedNormal,
        eval: Arc::new(TransformedNormalDensity { normal, transform }),
        source_indices: Vec::new(),
        params: json!({ "transform": transform, "normal": params }),
    })
}

/// Multivariate normal from explicit moments, for callers that already
/// have them.
pub fn normal_from_moments(block: &str, mean: DVector<f64>, cov: DMatrix<f64>, kind: DensityKind) -> Result<MarginalDensity> {
    let p = mean.len();
    let mvn = MvNormal::new(mean, cov)?;
    Ok(MarginalDensity {
        block: block.to_string(),
        kind,
        eval: Arc::new(mvn),
        source_indices: Vec::new(),
        params: json!({ "dim": p }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::BlockLayout;
    use crate::distributions::sample_normal;
    use crate::math::LN_2PI;
    use crate::rng::RngState;
    use crate::test_util::integrate;

    fn chain_of(name: &str, width: usize, draws: Vec<f64>) -> ChainSample {
        ChainSample::new(BlockLayout::new([(name, width)]).unwrap(), draws, 0, 0).unwrap()
    }

    struct FixedNormalCond {
        var: f64,
    }

    impl FullConditional for FixedNormalCond {
        fn block(&self) -> &str {
            "theta"
        }
        fn given(&self, draw: Draw<'_>) -> Result<Box<dyn BlockDensity>> {
            Ok(Box::new(Normal1 {
                mean: draw.block("phi")[0],
                var: self.var,
            }))
        }
    }

    #[test]
    fn rao_blackwell_with_one_draw_is_the_conditional() {
        let layout = BlockLayout::new([("theta", 1), ("phi", 1)]).unwrap();
        let chain = ChainSample::new(layout, vec![0.0, 1.5, 0.0, -2.0], 0, 0).unwrap();
        let reduced = ReducedSample::from_indices(&chain, vec![1]).unwrap();
        let rb = rao_blackwell("theta", &reduced, &FixedNormalCond { var: 0.7 }).unwrap();
        for x in [-3.0, -2.0, 0.1, 4.0] {
            let exact = crate::distributions::ln_pdf_normal(x, -2.0, 0.7);
            assert_eq!(rb.ln_pdf(&[x]), exact);
        }
        assert_eq!(rb.kind(), DensityKind::RaoBlackwell);
        assert!(rao_blackwell("phi", &reduced, &FixedNormalCond { var: 1.0 }).is_err());
    }

    #[test]
    fn reduced_sample_refuses_reordered_chain() {
        let layout = BlockLayout::new([("theta", 1), ("phi", 1)]).unwrap();
        let chain = ChainSample::new(layout, vec![0.0; 8], 0, 0).unwrap();
        let reordered = crate::chain::systematic_reorder(&chain);
        assert!(ReducedSample::draw(&reordered, 2, &mut RngState::new(0)).is_err());
        let r = ReducedSample::draw(&chain, 3, &mut RngState::new(0)).unwrap();
        assert_eq!(r.len(), 3);
        assert!(ReducedSample::draw(&chain, 5, &mut RngState::new(0)).is_err());
    }

    #[test]
    fn moment_normal_on_standard_normal_draws() {
        let mut rng = RngState::new(5);
        let p = 2;
        let draws: Vec<f64> = (0..100_000 * p).map(|_| sample_normal(&mut rng, 0.0, 1.0)).collect();
        let d = moment_matched_normal(&chain_of("x", p, draws), "x").unwrap();
        assert!((d.ln_pdf(&[0.0, 0.0]) + LN_2PI).abs() < 0.01);
    }

    #[test]
    fn moment_invgamma_matches_mean_exactly() {
        let mut rng = RngState::new(8);
        let ig = InverseGamma::new(5.0, 4.0).unwrap();
        let draws: Vec<f64> = (0..100_000).map(|_| ig.sample(&mut rng)).collect();
        let d = moment_matched_invgamma(&draws, "s").unwrap();
        let shape = d.summary().params["shape"].as_f64().unwrap();
        let rate = d.summary().params["rate"].as_f64().unwrap();
        assert!((shape / 5.0 - 1.0).abs() < 0.05, "shape {shape}");
        assert!((rate / 4.0 - 1.0).abs() < 0.05, "rate {rate}");
        assert!((rate / (shape - 1.0) - mean(&draws)).abs() < 1e-12);
    }

    #[test]
    fn moment_invgamma_degenerate_and_invalid() {
        let draws: Vec<f64> = (0..100).map(|i| 2.0 + 1e-9 * (i % 2) as f64).collect();
        let d = moment_matched_invgamma(&draws, "s").unwrap();
        assert!(d.ln_pdf(&[mean(&draws)]).is_finite());
        assert!(moment_matched_invgamma(&[1.0, -1.0, 2.0], "s").is_err());
        assert!(moment_matched_invgamma(&[1.0, 1.0], "s").is_err());
    }

    #[test]
    fn log_normal_transform_recovers_lognormal() {
        let mut rng = RngState::new(12);
        let (mu, s2): (f64, f64) = (0.4, 0.25);
        let draws: Vec<f64> = (0..100_000).map(|_| sample_normal(&mut rng, mu, s2).exp()).collect();
        let d = transformed_normal(&chain_of("s", 1, draws.clone()), "s", Transform::Log).unwrap();
        let median = mu.exp();
        let truth = crate::distributions::ln_pdf_normal(mu, mu, s2) - median.ln();
        assert!((d.ln_pdf(&[median]) - truth).abs() < 0.02);
        let mut sorted = draws;
        sorted.sort_by(f64::total_cmp);
        let q999 = sorted[(sorted.len() as f64 * 0.999) as usize];
        let mass = integrate(|x| d.ln_pdf(&[x]).exp(), 1e-12, q999);
        assert!((mass - 0.999).abs() < 1e-2, "mass {mass}");
        assert_eq!(d.ln_pdf(&[-1.0]), f64::NEG_INFINITY);
        assert!(transformed_normal(&chain_of("s", 1, vec![1.0, -1.0]), "s", Transform::Log).is_err());
    }

    #[test]
    fn logit_transform_normalizes() {
        let mut rng = RngState::new(2);
        let draws: Vec<f64> = (0..20_000)
            .map(|_| {
                let z = sample_normal(&mut rng, 0.5, 0.3);
                1.0 / (1.0 + (-z).exp())
            })
            .collect();
        let d = transformed_normal(&chain_of("p", 1, draws), "p", Transform::Logit).unwrap();
        let mass = integrate(|x| d.ln_pdf(&[x]).exp(), 1e-9, 1.0 - 1e-9);
        assert!((mass - 1.0).abs() < 1e-2);
    }
}
