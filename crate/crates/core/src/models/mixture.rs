//! Finite normal mixtures with conjugate priors:
//!
//! ```text
//! y_i ~ sum_j w_j N(mu_j, s2_j)
//! mu_j ~ N(mu0, s0sq),  s2_j ~ IG(nu0/2, delta0/2),  w ~ Dir(alpha)
//! ```
//!
//! optionally with a single variance shared by all components. The chain
//! blocks are `mu`, `sigma2` and `w`, plus the allocations `z`.

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::chain::mixture_blocks as mb;
use crate::chain::{BlockLayout, Draw};
use crate::density::{BlockDensity, FullConditional, Normal1};
use crate::distributions::{ln_pdf_normal, sample_categorical_log, sample_normal, Dirichlet, InverseGamma};
use crate::error::{Error, Result};
use crate::estimators::{EvidenceTarget, PriorSampler};
use crate::math::LogSumExp;
use crate::models::Sampler;
use crate::rng::RngState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixturePrior {
    pub mu0: f64,
    /// Prior variance of each mean.
    pub s0sq: f64,
    pub nu0: f64,
    pub delta0: f64,
    /// Symmetric Dirichlet concentration.
    pub alpha: f64,
}

impl Default for MixturePrior {
    fn default() -> Self {
        Self {
            mu0: 20.0,
            s0sq: 100.0,
            nu0: 6.0,
            delta0: 40.0,
            alpha: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MixtureModel {
    y: Vec<f64>,
    k: usize,
    equal_variance: bool,
    prior: MixturePrior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureState {
    pub mu: Vec<f64>,
    /// One variance per component; all equal in equal-variance mode.
    pub sigma2: Vec<f64>,
    pub w: Vec<f64>,
    pub z: Vec<usize>,
}

/// Per-component allocation counts and sums.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationStats {
    pub n: Vec<f64>,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl AllocationStats {
    /// `sum_{i in T_j} (y_i - mu)^2`
    pub fn scatter(&self, j: usize, mu: f64) -> f64 {
        (self.sum_sq[j] - 2.0 * mu * self.sum[j] + self.n[j] * mu * mu).max(0.0)
    }
}

impl MixtureModel {
    pub fn new(y: Vec<f64>, k: usize, equal_variance: bool, prior: MixturePrior) -> Result<Self> {
        if k == 0 {
            return Err(Error::domain("a mixture needs at least one component"));
        }
        if y.is_empty() || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("mixture data must be non-empty and finite"));
        }
        if !(prior.s0sq > 0.0 && prior.nu0 > 0.0 && prior.delta0 > 0.0 && prior.alpha > 0.0) {
            return Err(Error::domain("mixture hyperparameters must be positive"));
        }
        Ok(Self {
            y,
            k,
            equal_variance,
            prior,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn equal_variance(&self) -> bool {
        self.equal_variance
    }

    pub fn prior(&self) -> &MixturePrior {
        &self.prior
    }

    pub fn data(&self) -> &[f64] {
        &self.y
    }

    /// Parameter blocks in chain order, without the allocations.
    pub fn parameter_blocks(&self) -> [&'static str; 3] {
        [mb::MU, mb::SIGMA2, mb::W]
    }

    fn sigma2_width(&self) -> usize {
        if self.equal_variance {
            1
        } else {
            self.k
        }
    }

    fn parameter_spec(&self) -> Vec<(&'static str, usize)> {
        vec![(mb::MU, self.k), (mb::SIGMA2, self.sigma2_width()), (mb::W, self.k)]
    }

    pub fn layout(&self) -> BlockLayout {
        let mut spec = self.parameter_spec();
        spec.push((mb::Z, self.n()));
        BlockLayout::new(spec).expect("mixture layout")
    }

    /// Means, per-component variances and weights read from a draw.
    pub fn params_of(&self, draw: Draw<'_>) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let s2 = draw.block(mb::SIGMA2);
        let sigma2 = if self.equal_variance { vec![s2[0]; self.k] } else { s2.to_vec() };
        (draw.block(mb::MU).to_vec(), sigma2, draw.block(mb::W).to_vec())
    }

    pub fn stats_from_labels(&self, z: impl Iterator<Item = usize>) -> AllocationStats {
        let mut st = AllocationStats {
            n: vec![0.0; self.k],
            sum: vec![0.0; self.k],
            sum_sq: vec![0.0; self.k],
        };
        for (&y, j) in self.y.iter().zip(z) {
            st.n[j] += 1.0;
            st.sum[j] += y;
            st.sum_sq[j] += y * y;
        }
        st
    }

    fn stats_of(&self, draw: Draw<'_>) -> AllocationStats {
        self.stats_from_labels(draw.block(mb::Z).iter().map(|&v| v as usize))
    }

    /// `sum_i log sum_j w_j N(y_i; mu_j, s2_j)`.
    pub fn log_likelihood(&self, mu: &[f64], sigma2: &[f64], w: &[f64]) -> f64 {
        let ln_w: Vec<f64> = w.iter().map(|v| v.ln()).collect();
        let mut total = 0.0;
        for &y in &self.y {
            let mut acc = LogSumExp::default();
            for j in 0..self.k {
                acc.push(ln_w[j] + ln_pdf_normal(y, mu[j], sigma2[j]));
            }
            total += acc.value();
        }
        total
    }

    fn variance_prior(&self) -> InverseGamma {
        InverseGamma::new(0.5 * self.prior.nu0, 0.5 * self.prior.delta0).expect("validated")
    }

    fn weight_prior(&self) -> Dirichlet {
        Dirichlet::new(vec![self.prior.alpha; self.k]).expect("validated")
    }

    /// Log prior density; `sigma2` is per component and counted once in
    /// equal-variance mode.
    pub fn log_prior(&self, mu: &[f64], sigma2: &[f64], w: &[f64]) -> f64 {
        let p = &self.prior;
        let mut lp: f64 = mu.iter().map(|&m| ln_pdf_normal(m, p.mu0, p.s0sq)).sum();
        let ig = self.variance_prior();
        lp += if self.equal_variance {
            ig.ln_pdf(sigma2[0])
        } else {
            sigma2.iter().map(|&s| ig.ln_pdf(s)).sum()
        };
        lp + self.weight_prior().ln_pdf(w)
    }

    /// `N(mu_hat_j, s_hat_j^2)` given the variance and the allocations.
    pub fn mu_conditional(&self, stats: &AllocationStats, j: usize, sigma2_j: f64) -> Normal1 {
        let p = &self.prior;
        let var = 1.0 / (1.0 / p.s0sq + stats.n[j] / sigma2_j);
        Normal1 {
            mean: var * (p.mu0 / p.s0sq + stats.sum[j] / sigma2_j),
            var,
        }
    }

    /// Variance conditional for component `j`, or for the shared variance
    /// when `j` is `None`.
    pub fn sigma2_conditional(&self, stats: &AllocationStats, mu: &[f64], j: Option<usize>) -> InverseGamma {
        let p = &self.prior;
        let (n, scatter) = match j {
            Some(j) => (stats.n[j], stats.scatter(j, mu[j])),
            None => (
                stats.n.iter().sum(),
                (0..self.k).map(|j| stats.scatter(j, mu[j])).sum(),
            ),
        };
        InverseGamma::new(0.5 * (p.nu0 + n), 0.5 * (p.delta0 + scatter)).expect("positive parameters")
    }

    pub fn weight_conditional(&self, stats: &AllocationStats) -> Dirichlet {
        Dirichlet::new(stats.n.iter().map(|n| self.prior.alpha + n).collect()).expect("positive parameters")
    }

    /// One sweep: allocations, means, variances, weights.
    pub fn gibbs_step(&self, state: &mut MixtureState, rng: &mut RngState) -> Result<()> {
        let k = self.k;
        let mut logp = vec![0.0; k];
        let ln_w: Vec<f64> = state.w.iter().map(|v| v.ln()).collect();
        for (i, &y) in self.y.iter().enumerate() {
            for j in 0..k {
                logp[j] = ln_w[j] + ln_pdf_normal(y, state.mu[j], state.sigma2[j]);
            }
            state.z[i] = sample_categorical_log(rng, &logp)?;
        }
        let stats = self.stats_from_labels(state.z.iter().copied());
        for j in 0..k {
            let c = self.mu_conditional(&stats, j, state.sigma2[j]);
            state.mu[j] = sample_normal(rng, c.mean, c.var);
        }
        if self.equal_variance {
            let s = self.sigma2_conditional(&stats, &state.mu, None).sample(rng);
            state.sigma2.iter_mut().for_each(|v| *v = s);
        } else {
            for j in 0..k {
                state.sigma2[j] = self.sigma2_conditional(&stats, &state.mu, Some(j)).sample(rng);
            }
        }
        state.w = self.weight_conditional(&stats).sample(rng);
        Ok(())
    }

    /// Starting point: the sorted data split into `k` equal groups.
    pub fn initial_state(&self) -> MixtureState {
        let n = self.n();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| self.y[a].total_cmp(&self.y[b]));
        let mut z = vec![0usize; n];
        for (rank, &i) in order.iter().enumerate() {
            z[i] = (rank * self.k / n).min(self.k - 1);
        }
        let stats = self.stats_from_labels(z.iter().copied());
        let total_var = crate::math::variance(&self.y).max(1e-6);
        let mu: Vec<f64> = (0..self.k)
            .map(|j| if stats.n[j] > 0.0 { stats.sum[j] / stats.n[j] } else { self.prior.mu0 })
            .collect();
        let mut sigma2: Vec<f64> = (0..self.k)
            .map(|j| {
                if stats.n[j] > 1.0 {
                    (stats.scatter(j, mu[j]) / stats.n[j]).max(total_var * 1e-3)
                } else {
                    total_var
                }
            })
            .collect();
        if self.equal_variance {
            let pooled: f64 = (0..self.k).map(|j| stats.scatter(j, mu[j])).sum::<f64>() / n as f64;
            sigma2 = vec![pooled.max(total_var * 1e-3); self.k];
        }
        MixtureState {
            mu,
            sigma2,
            w: vec![1.0 / self.k as f64; self.k],
            z,
        }
    }
}

/// Independent univariate densities, one per vector entry.
struct Componentwise(Vec<Box<dyn BlockDensity>>);

impl BlockDensity for Componentwise {
    fn ln_pdf(&self, x: &[f64]) -> f64 {
        self.0.iter().enumerate().map(|(j, d)| d.ln_pdf(&x[j..j + 1])).sum()
    }
}

/// Full conditional of the mean vector; the means are conditionally
/// independent given the variances and allocations.
pub struct MuConditional<'a>(pub &'a MixtureModel);

impl FullConditional for MuConditional<'_> {
    fn block(&self) -> &str {
        mb::MU
    }

    fn given(&self, draw: Draw<'_>) -> Result<Box<dyn BlockDensity>> {
        let m = self.0;
        let stats = m.stats_of(draw);
        let (_, sigma2, _) = m.params_of(draw);
        let parts = (0..m.k)
            .map(|j| Box::new(m.mu_conditional(&stats, j, sigma2[j])) as Box<dyn BlockDensity>)
            .collect();
        Ok(Box::new(Componentwise(parts)))
    }
}

/// Full conditional of the variances, or of the shared variance.
pub struct Sigma2Conditional<'a>(pub &'a MixtureModel);

impl FullConditional for Sigma2Conditional<'_> {
    fn block(&self) -> &str {
        mb::SIGMA2
    }

    fn given(&self, draw: Draw<'_>) -> Result<Box<dyn BlockDensity>> {
        let m = self.0;
        let stats = m.stats_of(draw);
        let (mu, _, _) = m.params_of(draw);
        if m.equal_variance {
            return Ok(Box::new(m.sigma2_conditional(&stats, &mu, None)));
        }
        let parts = (0..m.k)
            .map(|j| Box::new(m.sigma2_conditional(&stats, &mu, Some(j))) as Box<dyn BlockDensity>)
            .collect();
        Ok(Box::new(Componentwise(parts)))
    }
}

/// Full conditional of the weights.
pub struct WeightConditional<'a>(pub &'a MixtureModel);

impl FullConditional for WeightConditional<'_> {
    fn block(&self) -> &str {
        mb::W
    }

    fn given(&self, draw: Draw<'_>) -> Result<Box<dyn BlockDensity>> {
        Ok(Box::new(self.0.weight_conditional(&self.0.stats_of(draw))))
    }
}

/// Full conditional of a single mean `mu_j`, for per-component checks.
pub struct ComponentMuConditional<'a> {
    pub model: &'a MixtureModel,
    pub j: usize,
}

impl FullConditional for ComponentMuConditional<'_> {
    fn block(&self) -> &str {
        mb::MU
    }

    fn given(&self, draw: Draw<'_>) -> Result<Box<dyn BlockDensity>> {
        let m = self.model;
        let (_, sigma2, _) = m.params_of(draw);
        Ok(Box::new(m.mu_conditional(&m.stats_of(draw), self.j, sigma2[self.j])))
    }
}

/// Averages a conditional over all `k!` relabellings of its argument.
///
/// After ex-post random permutation the marginal posterior of every block
/// is label symmetric, and so is this average, while each relabelling
/// present in the chain only needs to be covered once in the reduced
/// sample.
pub struct LabelSymmetric<'a> {
    inner: Box<dyn FullConditional + 'a>,
    perms: Vec<Vec<usize>>,
}

impl<'a> LabelSymmetric<'a> {
    pub fn new(inner: Box<dyn FullConditional + 'a>, k: usize) -> Self {
        Self {
            inner,
            perms: (0..k).permutations(k).collect(),
        }
    }
}

struct SymmetricDensity {
    inner: Box<dyn BlockDensity>,
    perms: Vec<Vec<usize>>,
}

impl BlockDensity for SymmetricDensity {
    fn ln_pdf(&self, x: &[f64]) -> f64 {
        // blocks narrower than k (a shared variance) are label free
        if x.len() != self.perms[0].len() {
            return self.inner.ln_pdf(x);
        }
        let mut acc = LogSumExp::default();
        let mut y = vec![0.0; x.len()];
        for p in &self.perms {
            for (j, &pj) in p.iter().enumerate() {
                y[j] = x[pj];
            }
            acc.push(self.inner.ln_pdf(&y));
        }
        acc.value() - (self.perms.len() as f64).ln()
    }
}

impl FullConditional for LabelSymmetric<'_> {
    fn block(&self) -> &str {
        self.inner.block()
    }

    fn given(&self, draw: Draw<'_>) -> Result<Box<dyn BlockDensity>> {
        Ok(Box::new(SymmetricDensity {
            inner: self.inner.given(draw)?,
            perms: self.perms.clone(),
        }))
    }
}

/// The parameter-block conditionals, in layout order.
pub fn full_conditionals(model: &MixtureModel) -> Vec<Box<dyn FullConditional + '_>> {
    vec![
        Box::new(MuConditional(model)),
        Box::new(Sigma2Conditional(model)),
        Box::new(WeightConditional(model)),
    ]
}

impl EvidenceTarget for MixtureModel {
    fn log_likelihood(&self, draw: Draw<'_>) -> f64 {
        let (mu, sigma2, w) = self.params_of(draw);
        MixtureModel::log_likelihood(self, &mu, &sigma2, &w)
    }

    fn log_prior(&self, draw: Draw<'_>) -> f64 {
        let (mu, sigma2, w) = self.params_of(draw);
        MixtureModel::log_prior(self, &mu, &sigma2, &w)
    }
}

impl PriorSampler for MixtureModel {
    /// Parameter blocks only; allocations are not part of a prior draw.
    fn layout(&self) -> BlockLayout {
        BlockLayout::new(self.parameter_spec()).expect("mixture layout")
    }

    fn sample_prior(&self, rng: &mut RngState) -> Vec<f64> {
        let p = self.prior;
        let mut out: Vec<f64> = (0..self.k).map(|_| sample_normal(rng, p.mu0, p.s0sq)).collect();
        let ig = self.variance_prior();
        out.extend((0..self.sigma2_width()).map(|_| ig.sample(rng)));
        out.extend(self.weight_prior().sample(rng));
        out
    }
}

/// Gibbs sampler over allocations, means, variances and weights.
pub struct MixtureGibbs<'a> {
    pub model: &'a MixtureModel,
}

impl Sampler for MixtureGibbs<'_> {
    type State = MixtureState;

    fn layout(&self) -> BlockLayout {
        self.model.layout()
    }

    fn step(&mut self, state: &mut MixtureState, rng: &mut RngState, _adapting: bool) -> Result<()> {
        self.model.gibbs_step(state, rng)
    }

    fn record(&self, state: &MixtureState, out: &mut Vec<f64>) {
        out.extend(&state.mu);
        if self.model.equal_variance {
            out.push(state.sigma2[0]);
        } else {
            out.extend(&state.sigma2);
        }
        out.extend(&state.w);
        out.extend(state.z.iter().map(|&j| j as f64));
    }
}

/// Summary of the prior for reports.
pub fn prior_params(model: &MixtureModel) -> serde_json::Value {
    json!({ "k": model.k, "equal_variance": model.equal_variance, "prior": model.prior })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> MixtureModel {
        MixtureModel::new(vec![1.0, 2.5, 9.0], 2, false, MixturePrior::default()).unwrap()
    }

    #[test]
    fn likelihood_matches_direct_sum() {
        let m = small();
        let (mu, s2, w) = ([1.5, 8.0], [1.2, 3.0], [0.3, 0.7]);
        let direct: f64 = m
            .data()
            .iter()
            .map(|&y| {
                (0..2)
                    .map(|j| w[j] * (-(y - mu[j]).powi(2) / (2.0 * s2[j])).exp() / (2.0 * std::f64::consts::PI * s2[j]).sqrt())
                    .sum::<f64>()
                    .ln()
            })
            .sum();
        assert!((m.log_likelihood(&mu, &s2, &w) - direct).abs() < 1e-12);
    }

    #[test]
    fn layout_lists_parameters_then_labels() {
        let m = MixtureModel::new(vec![0.0; 5], 3, true, MixturePrior::default()).unwrap();
        let names: Vec<_> = m.layout().blocks().iter().map(|b| (b.name.clone(), b.width)).collect();
        assert_eq!(
            names,
            vec![("mu".into(), 3), ("sigma2".into(), 1), ("w".into(), 3), ("z".into(), 5)]
        );
    }

    #[test]
    fn empty_component_conditionals_fall_back_to_prior() {
        let m = small();
        let stats = m.stats_from_labels([0usize, 0, 0].into_iter());
        let c = m.mu_conditional(&stats, 1, 2.0);
        assert_eq!((c.mean, c.var), (20.0, 100.0));
        let ig = m.sigma2_conditional(&stats, &[0.0, 5.0], Some(1));
        assert_eq!((ig.shape, ig.rate), (3.0, 20.0));
    }

    #[test]
    fn sweep_from_single_component_start() {
        let m = small();
        let mut st = MixtureState {
            mu: vec![4.0, 30.0],
            sigma2: vec![10.0, 10.0],
            w: vec![0.5, 0.5],
            z: vec![0, 0, 0],
        };
        let mut rng = RngState::new(3);
        m.gibbs_step(&mut st, &mut rng).unwrap();
        assert!(st.sigma2.iter().all(|&s| s > 0.0));
        assert!((st.w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
