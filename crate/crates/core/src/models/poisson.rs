//! Poisson log-linear model with subject random effects for longitudinal
//! counts:
//!
//! ```text
//! y_it ~ Poisson(lambda_it)
//! log lambda_it = log tau_it + beta1 x_i + beta2 x_i p_t + b_i1 + b_i2 p_t
//! b_i ~ N_q(eta, D),  beta ~ N_2(0, 100 I),  eta ~ N_q(0, 100 I),  D ~ IW_q(4, I)
//! ```
//!
//! where `x_i` is the treatment indicator, `p_t` indicates a post-baseline
//! period and `tau_it` is the length of the observation window (8 weeks at
//! baseline, 2 weeks afterwards). The reduced model drops the random slope
//! (`q = 1`).

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::chain::{BlockLayout, ChainSample, Draw};
use crate::density::{BlockDensity, FullConditional};
use crate::distributions::{symmetrize, unvech, vech, InverseWishart, MvNormal};
use crate::error::{Error, Result};
use crate::estimators::EvidenceTarget;
use crate::linalg::{cholesky_jitter, ln_det};
use crate::math::{ln_factorial, LogSumExp, LN_2PI};
use crate::models::Sampler;
use crate::rng::RngState;

pub const BETA: &str = "beta";
pub const ETA: &str = "eta";
pub const D: &str = "D";
pub const B: &str = "b";

pub const BASELINE_WEEKS: f64 = 8.0;
pub const PERIOD_WEEKS: f64 = 2.0;

/// Counts for one subject, baseline first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: u32,
    pub treatment: f64,
    pub counts: Vec<u64>,
}

/// Observations of one subject sharing the same linear predictor, pooled.
#[derive(Debug, Clone)]
struct Cell {
    count: f64,
    multiplicity: f64,
    log_offset: f64,
    fixed: [f64; 2],
    /// Whether this is a post-baseline cell (random slope applies).
    post: bool,
}

#[derive(Debug, Clone)]
struct Subject {
    cells: Vec<Cell>,
    ln_fact: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonPrior {
    pub beta_var: f64,
    pub eta_var: f64,
    pub d_df: f64,
}

impl Default for PoissonPrior {
    fn default() -> Self {
        Self {
            beta_var: 100.0,
            eta_var: 100.0,
            d_df: 4.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PoissonLongitudinalModel {
    records: Vec<SubjectRecord>,
    subjects: Vec<Subject>,
    q: usize,
    prior: PoissonPrior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonState {
    pub beta: [f64; 2],
    pub eta: Vec<f64>,
    pub d: DMatrix<f64>,
    /// Random effects, subject-major (`q` per subject).
    pub b: Vec<f64>,
}

/// `N_q(eta, D)` prepared for repeated evaluation at small `q`.
#[derive(Debug, Clone)]
pub struct RandomEffectsDensity {
    mean: Vec<f64>,
    prec: DMatrix<f64>,
    ln_norm: f64,
}

impl RandomEffectsDensity {
    pub fn new(eta: &[f64], d: &DMatrix<f64>) -> Option<Self> {
        let ch = Cholesky::new(d.clone())?;
        let q = eta.len() as f64;
        Some(Self {
            mean: eta.to_vec(),
            prec: ch.inverse(),
            ln_norm: -0.5 * q * LN_2PI - 0.5 * ln_det(&ch),
        })
    }

    pub fn ln_pdf(&self, x: &[f64]) -> f64 {
        let q = self.mean.len();
        let mut quad = 0.0;
        for r in 0..q {
            let dr = x[r] - self.mean[r];
            for c in 0..q {
                quad += dr * self.prec[(r, c)] * (x[c] - self.mean[c]);
            }
        }
        self.ln_norm - 0.5 * quad
    }
}

impl PoissonLongitudinalModel {
    /// `with_time_effect` adds the random slope on the post-baseline
    /// indicator (`q = 2`); otherwise only random intercepts (`q = 1`).
    pub fn new(records: Vec<SubjectRecord>, with_time_effect: bool, prior: PoissonPrior) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Data("no subjects".into()));
        }
        let mut subjects = Vec::with_capacity(records.len());
        for r in &records {
            if r.counts.is_empty() {
                return Err(Error::Data(format!("subject {} has no counts", r.id)));
            }
            let trt = r.treatment;
            let mut cells = vec![Cell {
                count: r.counts[0] as f64,
                multiplicity: 1.0,
                log_offset: BASELINE_WEEKS.ln(),
                fixed: [trt, 0.0],
                post: false,
            }];
            if r.counts.len() > 1 {
                cells.push(Cell {
                    count: r.counts[1..].iter().sum::<u64>() as f64,
                    multiplicity: (r.counts.len() - 1) as f64,
                    log_offset: PERIOD_WEEKS.ln(),
                    fixed: [trt, trt],
                    post: true,
                });
            }
            let ln_fact = r.counts.iter().map(|&c| ln_factorial(c)).sum();
            subjects.push(Subject { cells, ln_fact });
        }
        Ok(Self {
            records,
            subjects,
            q: if with_time_effect { 2 } else { 1 },
            prior,
        })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn records(&self) -> &[SubjectRecord] {
        &self.records
    }

    pub fn prior(&self) -> &PoissonPrior {
        &self.prior
    }

    pub fn layout(&self) -> BlockLayout {
        let q = self.q;
        BlockLayout::new([(BETA, 2), (ETA, q), (D, q * (q + 1) / 2), (B, q * self.n_subjects())]).expect("static layout")
    }

    /// `log f(y_i | beta, b_i)`.
    pub fn subject_log_likelihood(&self, i: usize, beta: &[f64], b_i: &[f64]) -> f64 {
        let s = &self.subjects[i];
        let mut ll = -s.ln_fact;
        for c in &s.cells {
            let mut lin = c.log_offset + c.fixed[0] * beta[0] + c.fixed[1] * beta[1] + b_i[0];
            if c.post && self.q == 2 {
                lin += b_i[1];
            }
            ll += c.count * lin - c.multiplicity * lin.exp();
        }
        ll
    }

    /// `sum_i log f(y_i | beta, b_i)`.
    pub fn hierarchical_log_likelihood(&self, beta: &[f64], b: &[f64]) -> f64 {
        (0..self.n_subjects())
            .map(|i| self.subject_log_likelihood(i, beta, &b[i * self.q..(i + 1) * self.q]))
            .sum()
    }

    pub fn log_prior_beta(&self, beta: &[f64]) -> f64 {
        beta.iter().map(|&x| crate::distributions::ln_pdf_normal(x, 0.0, self.prior.beta_var)).sum()
    }

    pub fn log_prior_eta(&self, eta: &[f64]) -> f64 {
        eta.iter().map(|&x| crate::distributions::ln_pdf_normal(x, 0.0, self.prior.eta_var)).sum()
    }

    fn d_prior(&self) -> InverseWishart {
        InverseWishart::new(self.prior.d_df, DMatrix::identity(self.q, self.q)).expect("valid prior")
    }

    pub fn log_prior_d(&self, d_vech: &[f64]) -> f64 {
        self.d_prior().ln_pdf_vech(d_vech)
    }

    /// `sum_i log N_q(b_i; eta, D)`; `-inf` if `D` is not positive definite.
    pub fn log_random_effects(&self, b: &[f64], eta: &[f64], d: &DMatrix<f64>) -> f64 {
        let Some(re) = RandomEffectsDensity::new(eta, d) else {
            return f64::NEG_INFINITY;
        };
        b.chunks(self.q).map(|bi| re.ln_pdf(bi)).sum()
    }

    /// `eta | D, b ~ N_q(V D^{-1} sum_i b_i, V)`, `V = (I/100 + m D^{-1})^{-1}`.
    pub fn eta_conditional(&self, d: &DMatrix<f64>, b: &[f64]) -> Result<MvNormal> {
        let q = self.q;
        let d_inv = cholesky_jitter(d)?.inverse();
        let m = self.n_subjects() as f64;
        let prec = DMatrix::identity(q, q) / self.prior.eta_var + &d_inv * m;
        let v = symmetrize(cholesky_jitter(&prec)?.inverse());
        let mut sum = DVector::zeros(q);
        for bi in b.chunks(q) {
            sum += DVector::from_column_slice(bi);
        }
        let mean = &v * (d_inv * sum);
        MvNormal::new(mean, v)
    }

    /// `D | eta, b ~ IW_q(m + df, I + sum_i (b_i - eta)(b_i - eta)')`.
    pub fn d_conditional(&self, eta: &[f64], b: &[f64]) -> Result<InverseWishart> {
        let q = self.q;
        let mut scale = DMatrix::identity(q, q);
        for bi in b.chunks(q) {
            let dev = DVector::from_fn(q, |r, _| bi[r] - eta[r]);
            scale += &dev * dev.transpose();
        }
        InverseWishart::new(self.prior.d_df + self.n_subjects() as f64, scale)
    }

    /// Crude starting point: population rate from the data, zero effects.
    pub fn initial_state(&self) -> PoissonState {
        let q = self.q;
        let (mut y, mut t) = (0.0, 0.0);
        for s in &self.subjects {
            for c in &s.cells {
                y += c.count;
                t += c.multiplicity * c.log_offset.exp();
            }
        }
        let mut eta = vec![0.0; q];
        eta[0] = (y.max(1.0) / t).ln();
        let b = (0..self.n_subjects()).flat_map(|_| eta.clone()).collect();
        PoissonState {
            beta: [0.0, 0.0],
            eta,
            d: DMatrix::identity(q, q) * 0.5,
            b,
        }
    }

    fn unpack_d(&self, d_vech: &[f64]) -> DMatrix<f64> {
        unvech(d_vech, self.q)
    }
}

/// Full conditional of `eta`.
pub struct EtaConditional<'a>(pub &'a PoissonLongitudinalModel);

impl FullConditional for EtaConditional<'_> {
    fn block(&self) -> &str {
        ETA
    }

    fn given(&self, draw: Draw<'_>) -> Result<Box<dyn BlockDensity>> {
        let d = self.0.unpack_d(draw.block(D));
        Ok(Box::new(self.0.eta_conditional(&d, draw.block(B))?))
    }
}

/// Full conditional of `D`, evaluated on its `vech`.
pub struct DConditional<'a>(pub &'a PoissonLongitudinalModel);

impl FullConditional for DConditional<'_> {
    fn block(&self) -> &str {
        D
    }

    fn given(&self, draw: Draw<'_>) -> Result<Box<dyn BlockDensity>> {
        Ok(Box::new(self.0.d_conditional(draw.block(ETA), draw.block(B))?))
    }
}

/// Target of the estimator that keeps the random effects as a block:
/// hierarchical likelihood, with `pi(b | eta, D)` in the prior.
pub struct HierarchicalTarget<'a>(pub &'a PoissonLongitudinalModel);

impl EvidenceTarget for HierarchicalTarget<'_> {
    fn log_likelihood(&self, draw: Draw<'_>) -> f64 {
        self.0.hierarchical_log_likelihood(draw.block(BETA), draw.block(B))
    }

    fn log_prior(&self, draw: Draw<'_>) -> f64 {
        let m = self.0;
        let d_vech = draw.block(D);
        let lp_d = m.log_prior_d(d_vech);
        if !lp_d.is_finite() {
            return f64::NEG_INFINITY;
        }
        m.log_prior_beta(draw.block(BETA))
            + m.log_prior_eta(draw.block(ETA))
            + lp_d
            + m.log_random_effects(draw.block(B), draw.block(ETA), &m.unpack_d(d_vech))
    }
}

/// Per-subject normal importance densities for the random effects.
#[derive(Debug, Clone)]
struct SubjectProposal {
    mean: Vec<f64>,
    chol: DMatrix<f64>,
    ln_norm: f64,
}

/// Importance-sampling estimate of the likelihood with the random effects
/// integrated out, `prod_i int f(y_i | beta, b_i) N(b_i; eta, D) db_i`.
///
/// Each subject uses its own `N_q(b~_i, B~_ii)` importance density. The
/// random stream is derived from the seed and the draw index, so a given
/// draw always gets the same estimate regardless of evaluation order.
#[derive(Debug, Clone)]
pub struct IntegratedLikelihood<'a> {
    model: &'a PoissonLongitudinalModel,
    proposals: Vec<SubjectProposal>,
    n_is: usize,
    seed: u64,
}

impl<'a> IntegratedLikelihood<'a> {
    /// Importance densities from explicit per-subject means and `q x q`
    /// covariances.
    pub fn new(
        model: &'a PoissonLongitudinalModel,
        means: Vec<Vec<f64>>,
        covs: Vec<DMatrix<f64>>,
        n_is: usize,
        seed: u64,
    ) -> Result<Self> {
        if means.len() != model.n_subjects() || covs.len() != model.n_subjects() {
            return Err(Error::Estimator("one importance density per subject is required".into()));
        }
        if n_is == 0 {
            return Err(Error::config("estimator.n_is", "must be positive"));
        }
        let q = model.q;
        let mut proposals = Vec::with_capacity(means.len());
        for (mean, cov) in means.into_iter().zip(covs) {
            let ch = cholesky_jitter(&cov)?;
            proposals.push(SubjectProposal {
                ln_norm: -0.5 * q as f64 * LN_2PI - 0.5 * ln_det(&ch),
                chol: ch.l(),
                mean,
            });
        }
        Ok(Self {
            model,
            proposals,
            n_is,
            seed,
        })
    }

    /// Importance densities from the chain's random-effect means and the
    /// diagonal `q x q` blocks of their covariance.
    pub fn from_chain(model: &'a PoissonLongitudinalModel, chain: &ChainSample, n_is: usize, seed: u64) -> Result<Self> {
        let q = model.q;
        let rows: Vec<&[f64]> = chain.block_rows(B)?.collect();
        let mut means = Vec::with_capacity(model.n_subjects());
        let mut covs = Vec::with_capacity(model.n_subjects());
        for i in 0..model.n_subjects() {
            let sub = rows.iter().map(|r| &r[i * q..(i + 1) * q]);
            let (m, c) = crate::linalg::mean_cov(sub, q);
            means.push(m.iter().copied().collect());
            covs.push(c);
        }
        Self::new(model, means, covs, n_is, seed)
    }

    pub fn n_is(&self) -> usize {
        self.n_is
    }

    fn subject(&self, i: usize, beta: &[f64], re: &RandomEffectsDensity, rng: &mut RngState) -> f64 {
        let q = self.model.q;
        let p = &self.proposals[i];
        let mut acc = LogSumExp::default();
        let mut z = [0.0; 2];
        let mut x = [0.0; 2];
        for _ in 0..self.n_is {
            for zr in z.iter_mut().take(q) {
                *zr = rng.sample(StandardNormal);
            }
            for r in 0..q {
                x[r] = p.mean[r] + (0..=r).map(|c| p.chol[(r, c)] * z[c]).sum::<f64>();
            }
            // z'z is the proposal's quadratic form
            let ln_q = p.ln_norm - 0.5 * z[..q].iter().map(|v| v * v).sum::<f64>();
            acc.push(self.model.subject_log_likelihood(i, beta, &x[..q]) + re.ln_pdf(&x[..q]) - ln_q);
        }
        acc.value() - (self.n_is as f64).ln()
    }

    /// Log of the importance-sampling likelihood estimate at
    /// `(beta, eta, D)` using random stream `stream`.
    pub fn log_likelihood(&self, beta: &[f64], eta: &[f64], d: &DMatrix<f64>, stream: u64) -> f64 {
        let Some(re) = RandomEffectsDensity::new(eta, d) else {
            return f64::NEG_INFINITY;
        };
        let mut rng = RngState::stream(self.seed, stream);
        (0..self.model.n_subjects()).map(|i| self.subject(i, beta, &re, &mut rng)).sum()
    }
}

/// Target of the estimator with the random effects integrated out.
pub struct MarginalTarget<'a>(pub IntegratedLikelihood<'a>);

impl EvidenceTarget for MarginalTarget<'_> {
    fn log_likelihood(&self, draw: Draw<'_>) -> f64 {
        let m = self.0.model;
        self.0.log_likelihood(draw.block(BETA), draw.block(ETA), &m.unpack_d(draw.block(D)), draw.index as u64)
    }

    fn log_prior(&self, draw: Draw<'_>) -> f64 {
        let m = self.0.model;
        m.log_prior_beta(draw.block(BETA)) + m.log_prior_eta(draw.block(ETA)) + m.log_prior_d(draw.block(D))
    }
}

/// Adaptive random-walk Metropolis for `beta` and each `b_i`, one scalar
/// coordinate at a time, with exact Gibbs draws for `eta` and `D`.
///
/// Proposal scales follow a Robbins-Monro recursion towards 44% acceptance
/// during burn-in and are frozen afterwards.
pub struct PoissonSampler<'a> {
    pub model: &'a PoissonLongitudinalModel,
    beta_scale: [f64; 2],
    b_scale: Vec<f64>,
    adapt_step: u64,
    beta_acc: (u64, u64),
    b_acc: (u64, u64),
}

pub const TARGET_ACCEPTANCE: f64 = 0.44;

impl<'a> PoissonSampler<'a> {
    pub fn new(model: &'a PoissonLongitudinalModel) -> Self {
        Self {
            model,
            beta_scale: [0.1, 0.1],
            b_scale: vec![0.3; model.q * model.n_subjects()],
            adapt_step: 0,
            beta_acc: (0, 0),
            b_acc: (0, 0),
        }
    }

    /// Acceptance rates of the `beta` and `b` updates after burn-in.
    pub fn acceptance_rates(&self) -> (f64, f64) {
        let rate = |(a, n): (u64, u64)| if n == 0 { f64::NAN } else { a as f64 / n as f64 };
        (rate(self.beta_acc), rate(self.b_acc))
    }

    fn adapt(scale: &mut f64, accept_prob: f64, gain: f64) {
        *scale *= (gain * (accept_prob - TARGET_ACCEPTANCE)).exp();
    }
}

impl Sampler for PoissonSampler<'_> {
    type State = PoissonState;

    fn layout(&self) -> BlockLayout {
        self.model.layout()
    }

    fn step(&mut self, st: &mut PoissonState, rng: &mut RngState, adapting: bool) -> Result<()> {
        let m = self.model;
        let q = m.q;
        let gain = if adapting {
            self.adapt_step += 1;
            (self.adapt_step as f64).powf(-0.6)
        } else {
            0.0
        };

        // beta, coordinate-wise
        let mut ll = m.hierarchical_log_likelihood(&st.beta, &st.b);
        for c in 0..2 {
            let mut prop = st.beta;
            prop[c] += self.beta_scale[c] * rng.sample::<f64, _>(StandardNormal);
            let ll_new = m.hierarchical_log_likelihood(&prop, &st.b);
            let log_ratio = ll_new - ll + m.log_prior_beta(&prop) - m.log_prior_beta(&st.beta);
            let accept_prob = log_ratio.min(0.0).exp();
            let accepted = rng.random::<f64>() < accept_prob;
            if accepted {
                st.beta = prop;
                ll = ll_new;
            }
            if adapting {
                Self::adapt(&mut self.beta_scale[c], accept_prob, gain);
            } else {
                self.beta_acc.0 += accepted as u64;
                self.beta_acc.1 += 1;
            }
        }

        // random effects, coordinate-wise within each subject
        let re = RandomEffectsDensity::new(&st.eta, &st.d)
            .ok_or_else(|| Error::Numerical("random-effects covariance lost definiteness".into()))?;
        for i in 0..m.n_subjects() {
            let range = i * q..(i + 1) * q;
            let mut cur = [0.0; 2];
            cur[..q].copy_from_slice(&st.b[range.clone()]);
            let mut cur_lp = m.subject_log_likelihood(i, &st.beta, &cur[..q]) + re.ln_pdf(&cur[..q]);
            for r in 0..q {
                let idx = i * q + r;
                let mut prop = cur;
                prop[r] += self.b_scale[idx] * rng.sample::<f64, _>(StandardNormal);
                let prop_lp = m.subject_log_likelihood(i, &st.beta, &prop[..q]) + re.ln_pdf(&prop[..q]);
                let accept_prob = (prop_lp - cur_lp).min(0.0).exp();
                let accepted = rng.random::<f64>() < accept_prob;
                if accepted {
                    cur = prop;
                    cur_lp = prop_lp;
                }
                if adapting {
                    Self::adapt(&mut self.b_scale[idx], accept_prob, gain);
                } else {
                    self.b_acc.0 += accepted as u64;
                    self.b_acc.1 += 1;
                }
            }
            st.b[range].copy_from_slice(&cur[..q]);
        }

        st.eta = m.eta_conditional(&st.d, &st.b)?.sample(rng).iter().copied().collect();
        st.d = m.d_conditional(&st.eta, &st.b)?.sample(rng);
        Ok(())
    }

    fn record(&self, st: &PoissonState, out: &mut Vec<f64>) {
        out.extend(st.beta);
        out.extend(&st.eta);
        out.extend(vech(&st.d));
        out.extend(&st.b);
    }
}
