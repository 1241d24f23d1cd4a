//! Conjugate normal linear regression with a Zellner g-prior:
//!
//! ```text
//! y | beta, s2 ~ N(X beta, s2 I)
//! beta | s2   ~ N(0, s2 V),   V = g (X'X)^{-1}
//! s2          ~ IG(a0, b0)
//! ```
//!
//! Every conditional and marginal posterior is available in closed form,
//! which makes this family the exact oracle for the estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::json;
use statrs::function::gamma::ln_gamma;

use crate::chain::{BlockLayout, Draw};
use crate::density::{BlockDensity, FullConditional, MarginalDensity};
use crate::distributions::{InverseGamma, MvStudentT};
use crate::error::{Error, Result};
use crate::estimators::{EvidenceTarget, PriorSampler};
use crate::linalg::{cholesky_jitter, ln_det};
use crate::math::LN_2PI;
use crate::models::Sampler;
use crate::rng::RngState;

pub const BETA: &str = "beta";
pub const SIGMA2: &str = "sigma2";

/// Default inverse-gamma hyperparameters for the error variance.
pub const DEFAULT_A0: f64 = 1e-3;
pub const DEFAULT_B0: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct RegressionModel {
    x: DMatrix<f64>,
    y: DVector<f64>,
    g: f64,
    a0: f64,
    b0: f64,
    xty: DVector<f64>,
    yty: f64,
    /// `X'X`
    gram: DMatrix<f64>,
    /// Posterior precision factor `Lambda = X'X + V^{-1} = (1 + 1/g) X'X`.
    post_prec: Cholesky<f64, Dyn>,
    ln_det_post_prec: f64,
    /// Posterior location of beta, `Lambda^{-1} X'y`.
    post_mean: DVector<f64>,
    /// Cholesky factor of `Lambda^{-1}`, for sampling.
    post_cov_chol: DMatrix<f64>,
    /// `log det V^{-1}`
    ln_det_prior_prec: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionState {
    pub beta: DVector<f64>,
    pub sigma2: f64,
}

impl RegressionModel {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, g: f64, a0: f64, b0: f64) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n || x.ncols() == 0 {
            return Err(Error::domain(format!(
                "design is {}x{} but there are {n} responses",
                x.nrows(),
                x.ncols()
            )));
        }
        if !(g > 0.0 && a0 > 0.0 && b0 > 0.0) {
            return Err(Error::domain("g, a0 and b0 must be positive"));
        }
        let gram = x.transpose() * &x;
        let gram_chol = Cholesky::new(gram.clone()).ok_or_else(|| Error::Numerical("X'X is singular".into()))?;
        let diag = gram_chol.l_dirty().diagonal();
        if diag.min() <= 1e-7 * diag.max() {
            return Err(Error::Numerical("X'X is numerically singular".into()));
        }
        let p = x.ncols() as f64;
        let ln_det_gram = ln_det(&gram_chol);
        let ln_det_prior_prec = ln_det_gram - p * g.ln();
        let lambda = &gram * (1.0 + 1.0 / g);
        let post_prec = cholesky_jitter(&lambda)?;
        let ln_det_post_prec = ln_det(&post_prec);
        let xty = x.transpose() * &y;
        let post_mean = post_prec.solve(&xty);
        let post_cov = crate::distributions::symmetrize(post_prec.inverse());
        let post_cov_chol = cholesky_jitter(&post_cov)?.l();
        Ok(Self {
            yty: y.dot(&y),
            x,
            y,
            g,
            a0,
            b0,
            xty,
            gram,
            post_prec,
            ln_det_post_prec,
            post_mean,
            post_cov_chol,
            ln_det_prior_prec,
        })
    }

    /// The same data and variance prior under a different `g`.
    pub fn with_g(&self, g: f64) -> Result<Self> {
        Self::new(self.x.clone(), self.y.clone(), g, self.a0, self.b0)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn layout(&self) -> BlockLayout {
        BlockLayout::new([(BETA, self.p()), (SIGMA2, 1)]).expect("static layout")
    }

    /// Ordinary least squares estimate.
    pub fn ols(&self) -> DVector<f64> {
        self.post_mean.clone() * (1.0 + 1.0 / self.g)
    }

    /// Posterior mean of beta.
    pub fn posterior_location(&self) -> &DVector<f64> {
        &self.post_mean
    }

    fn ssr(&self, beta: &[f64]) -> f64 {
        let b = DVector::from_column_slice(beta);
        self.yty - 2.0 * b.dot(&self.xty) + (&self.gram * &b).dot(&b)
    }

    /// `beta' V^{-1} beta = beta' X'X beta / g`.
    fn prior_quad(&self, beta: &[f64]) -> f64 {
        let b = DVector::from_column_slice(beta);
        (&self.gram * &b).dot(&b) / self.g
    }

    pub fn log_likelihood(&self, beta: &[f64], sigma2: f64) -> f64 {
        if sigma2 <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let n = self.n() as f64;
        -0.5 * n * (LN_2PI + sigma2.ln()) - 0.5 * self.ssr(beta) / sigma2
    }

    pub fn log_prior(&self, beta: &[f64], sigma2: f64) -> f64 {
        if sigma2 <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let p = self.p() as f64;
        let beta_part = -0.5 * p * (LN_2PI + sigma2.ln()) + 0.5 * self.ln_det_prior_prec
            - 0.5 * self.prior_quad(beta) / sigma2;
        let ig = InverseGamma::new(self.a0, self.b0).expect("validated hyperparameters");
        beta_part + ig.ln_pdf(sigma2)
    }

    /// Posterior shape and rate of the error variance: `IG(a_n, b_n)`.
    pub fn posterior_sigma2_params(&self) -> (f64, f64) {
        let a_n = self.a0 + 0.5 * self.n() as f64;
        let b_n = self.b0 + 0.5 * (self.yty - self.xty.dot(&self.post_mean));
        (a_n, b_n)
    }

    /// Closed-form `log m(y)` of the normal-inverse-gamma model.
    pub fn exact_log_evidence(&self) -> f64 {
        let n = self.n() as f64;
        let (a_n, b_n) = self.posterior_sigma2_params();
        -0.5 * n * LN_2PI + 0.5 * (self.ln_det_prior_prec - self.ln_det_post_prec) + self.a0 * self.b0.ln()
            - ln_gamma(self.a0)
            + ln_gamma(a_n)
            - a_n * b_n.ln()
    }

    /// Exact marginal posteriors: multivariate Student-t for beta and
    /// inverse-gamma for the error variance.
    pub fn exact_marginals(&self) -> Result<(MarginalDensity, MarginalDensity)> {
        let (a_n, b_n) = self.posterior_sigma2_params();
        let scale = crate::distributions::symmetrize(self.post_prec.inverse() * (b_n / a_n));
        let t = MvStudentT::new(2.0 * a_n, self.post_mean.clone(), scale)?;
        let ig = InverseGamma::new(a_n, b_n)?;
        Ok((
            MarginalDensity::exact(BETA, t, json!({ "family": "student-t", "df": 2.0 * a_n, "loc": self.post_mean.as_slice() })),
            MarginalDensity::exact(SIGMA2, ig, json!({ "family": "inverse-gamma", "shape": a_n, "rate": b_n })),
        ))
    }

    /// Conditional of the error variance given beta:
    /// `IG(a0 + (n+p)/2, b0 + (SSR(beta) + beta' V^{-1} beta) / 2)`.
    pub fn sigma2_conditional(&self, beta: &[f64]) -> InverseGamma {
        let shape = self.a0 + 0.5 * (self.n() + self.p()) as f64;
        let rate = self.b0 + 0.5 * (self.ssr(beta) + self.prior_quad(beta));
        InverseGamma::new(shape, rate).expect("positive conditional parameters")
    }

    /// Conditional of beta given the variance: `N(Lambda^{-1} X'y, s2 Lambda^{-1})`.
    pub fn beta_conditional(&self, sigma2: f64) -> BetaGivenSigma2 {
        BetaGivenSigma2 {
            mean: self.post_mean.clone(),
            prec: self.post_prec.l(),
            ln_det_prec: self.ln_det_post_prec,
            sigma2,
        }
    }

    pub fn gibbs_step(&self, state: &mut RegressionState, rng: &mut RngState) {
        let z = DVector::from_fn(self.p(), |_, _| rng.sample::<f64, _>(StandardNormal));
        state.beta = &self.post_mean + (&self.post_cov_chol * z) * state.sigma2.sqrt();
        state.sigma2 = self.sigma2_conditional(state.beta.as_slice()).sample(rng);
    }

    /// A starting point at the posterior mode region.
    pub fn initial_state(&self) -> RegressionState {
        let (a_n, b_n) = self.posterior_sigma2_params();
        RegressionState {
            beta: self.post_mean.clone(),
            sigma2: b_n / a_n,
        }
    }
}

/// `N(mean, sigma2 * prec^{-1})` evaluated through the precision factor.
#[derive(Debug, Clone)]
pub struct BetaGivenSigma2 {
    mean: DVector<f64>,
    /// Lower Cholesky factor of the precision `Lambda`.
    prec: DMatrix<f64>,
    ln_det_prec: f64,
    sigma2: f64,
}

impl BlockDensity for BetaGivenSigma2 {
    fn ln_pdf(&self, x: &[f64]) -> f64 {
        let p = x.len();
        // (x - m)' L L' (x - m) = |L'(x - m)|^2
        let mut q = 0.0;
        for j in 0..p {
            let mut s = 0.0;
            for i in j..p {
                s += self.prec[(i, j)] * (x[i] - self.mean[i]);
            }
            q += s * s;
        }
        -0.5 * p as f64 * (LN_2PI + self.sigma2.ln()) + 0.5 * self.ln_det_prec - 0.5 * q / self.sigma2
    }
}

/// Full conditional of `beta` for Rao-Blackwellization.
pub struct BetaConditional<'a>(pub &'a RegressionModel);

impl FullConditional for BetaConditional<'_> {
    fn block(&self) -> &str {
        BETA
    }

    fn given(&self, draw: Draw<'_>) -> Result<Box<dyn BlockDensity>> {
        Ok(Box::new(self.0.beta_conditional(draw.block(SIGMA2)[0])))
    }
}

/// Full conditional of `sigma2` for Rao-Blackwellization.
pub struct Sigma2Conditional<'a>(pub &'a RegressionModel);

impl FullConditional for Sigma2Conditional<'_> {
    fn block(&self) -> &str {
        SIGMA2
    }

    fn given(&self, draw: Draw<'_>) -> Result<Box<dyn BlockDensity>> {
        Ok(Box::new(self.0.sigma2_conditional(draw.block(BETA))))
    }
}

impl EvidenceTarget for RegressionModel {
    fn log_likelihood(&self, draw: Draw<'_>) -> f64 {
        RegressionModel::log_likelihood(self, draw.block(BETA), draw.block(SIGMA2)[0])
    }

    fn log_prior(&self, draw: Draw<'_>) -> f64 {
        RegressionModel::log_prior(self, draw.block(BETA), draw.block(SIGMA2)[0])
    }
}

impl PriorSampler for RegressionModel {
    fn layout(&self) -> BlockLayout {
        RegressionModel::layout(self)
    }

    fn sample_prior(&self, rng: &mut RngState) -> Vec<f64> {
        let sigma2 = InverseGamma::new(self.a0, self.b0).expect("validated").sample(rng);
        // beta ~ N(0, s2 g (X'X)^{-1}): solve L' b = z with X'X = L L'
        let gram_chol = Cholesky::new(self.gram.clone()).expect("validated gram");
        let z = DVector::from_fn(self.p(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let b = gram_chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .expect("positive diagonal");
        let mut out: Vec<f64> = (b * (sigma2 * self.g).sqrt()).iter().copied().collect();
        out.push(sigma2);
        out
    }
}

/// Gibbs sampler: `beta | s2, y` then `s2 | beta, y`.
pub struct RegressionGibbs<'a> {
    pub model: &'a RegressionModel,
}

impl Sampler for RegressionGibbs<'_> {
    type State = RegressionState;

    fn layout(&self) -> BlockLayout {
        self.model.layout()
    }

    fn step(&mut self, state: &mut RegressionState, rng: &mut RngState, _adapting: bool) -> Result<()> {
        self.model.gibbs_step(state, rng);
        Ok(())
    }

    fn record(&self, state: &RegressionState, out: &mut Vec<f64>) {
        out.extend(state.beta.iter());
        out.push(state.sigma2);
    }
}

/// The four windmill designs: intercept only, linear wind speed (centred),
/// centred log wind speed, and centred wind speed plus its square.
pub fn wind_design(wind_speed: &[f64], model: usize) -> Result<DMatrix<f64>> {
    let n = wind_speed.len();
    let centred = |v: Vec<f64>| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.into_iter().map(|x| x - m).collect::<Vec<_>>()
    };
    let x1 = centred(wind_speed.to_vec());
    let x2 = centred(wind_speed.iter().map(|x| x.ln()).collect());
    let sq: Vec<f64> = wind_speed.iter().map(|x| x * x).collect();
    let cols: Vec<&[f64]> = match model {
        0 => vec![],
        1 => vec![&x1],
        2 => vec![&x2],
        3 => vec![&x1, &sq],
        m => return Err(Error::config("model.design", format!("unknown wind model M{m}"))),
    };
    Ok(DMatrix::from_fn(n, cols.len() + 1, |i, j| if j == 0 { 1.0 } else { cols[j - 1][i] }))
}
