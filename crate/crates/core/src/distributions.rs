//! Log-densities and samplers for the families used by the case-study
//! models: (multivariate) normal, Student-t, inverse-gamma, Dirichlet,
//! inverse-Wishart, Poisson and categorical.
//!
//! Everything is evaluated in log space. Constructors validate parameters
//! and precompute normalizing constants and factorizations, so the
//! `ln_pdf` methods are cheap and infallible: outside the support they
//! return `-inf`. The free `log_pdf_*` functions are the checked entry
//! points that report domain violations as errors instead.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jitter, ln_det, mahalanobis_sq};
use crate::math::{ln_factorial, ln_multigamma, log_sum_exp, LN_2PI};

/// Tolerance on `|sum(w) - 1|` for simplex inputs.
pub const SIMPLEX_TOL: f64 = 1e-10;

#[inline]
pub fn ln_pdf_normal(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

pub fn sample_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, var: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    mean + var.sqrt() * z
}

/// Multivariate normal with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct MvNormal {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    ln_norm: f64,
}

impl MvNormal {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() {
            return Err(Error::domain(format!(
                "mean has length {} but covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        let chol = cholesky_jitter(&cov)?;
        let p = mean.len() as f64;
        let ln_norm = -0.5 * (p * LN_2PI + ln_det(&chol));
        Ok(Self {
            mean,
            chol,
            ln_norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Covariance as reconstructed from the (possibly jittered) factor.
    pub fn cov(&self) -> DMatrix<f64> {
        let l = self.chol.l();
        &l * l.transpose()
    }

    pub fn ln_pdf(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        let diff: Vec<f64> = x.iter().zip(self.mean.iter()).map(|(a, b)| a - b).collect();
        self.ln_norm - 0.5 * mahalanobis_sq(&self.chol, &diff)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + self.chol.l_dirty().lower_triangle() * z
    }
}

/// Checked multivariate normal log-density.
pub fn log_pdf_mvnormal(x: &[f64], mean: &[f64], cov: &DMatrix<f64>) -> Result<f64> {
    if x.len() != mean.len() {
        return Err(Error::domain(format!(
            "point has dimension {} but mean has {}",
            x.len(),
            mean.len()
        )));
    }
    let mvn = MvNormal::new(DVector::from_column_slice(mean), cov.clone())?;
    Ok(mvn.ln_pdf(x))
}

/// Multivariate Student-t with `df` degrees of freedom, location and
/// scale matrix (not covariance).
#[derive(Debug, Clone)]
pub struct MvStudentT {
    df: f64,
    loc: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    ln_norm: f64,
}

impl MvStudentT {
    pub fn new(df: f64, loc: DVector<f64>, scale: DMatrix<f64>) -> Result<Self> {
        if !(df > 0.0) {
            return Err(Error::domain(format!("student-t df must be positive, got {df}")));
        }
        let chol = cholesky_jitter(&scale)?;
        let p = loc.len() as f64;
        let ln_norm = ln_gamma((df + p) / 2.0)
            - ln_gamma(df / 2.0)
            - 0.5 * p * (df * std::f64::consts::PI).ln()
            - 0.5 * ln_det(&chol);
        Ok(Self {
            df,
            loc,
            chol,
            ln_norm,
        })
    }

    pub fn ln_pdf(&self, x: &[f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(self.loc.iter()).map(|(a, b)| a - b).collect();
        let q = mahalanobis_sq(&self.chol, &diff);
        let p = self.loc.len() as f64;
        self.ln_norm - 0.5 * (self.df + p) * (1.0 + q / self.df).ln()
    }

    pub fn df(&self) -> f64 {
        self.df
    }

    pub fn loc(&self) -> &DVector<f64> {
        &self.loc
    }
}

/// Inverse-gamma with shape `alpha` and rate `beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseGamma {
    pub shape: f64,
    pub rate: f64,
    ln_norm: f64,
}

impl InverseGamma {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && rate > 0.0) || !shape.is_finite() || !rate.is_finite() {
            return Err(Error::domain(format!(
                "inverse-gamma needs shape > 0 and rate > 0, got ({shape}, {rate})"
            )));
        }
        Ok(Self {
            shape,
            rate,
            ln_norm: shape * rate.ln() - ln_gamma(shape),
        })
    }

    #[inline]
    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.ln_norm - (self.shape + 1.0) * x.ln() - self.rate / x
    }

    pub fn mean(&self) -> Option<f64> {
        (self.shape > 1.0).then(|| self.rate / (self.shape - 1.0))
    }

    pub fn mode(&self) -> f64 {
        self.rate / (self.shape + 1.0)
    }

    /// Draws `rate / G` with `G ~ Gamma(shape, 1)`. Small shapes go through
    /// `log G = log G' + log(U) / shape`, `G' ~ Gamma(shape + 1, 1)`, so the
    /// result does not underflow to zero for very diffuse priors.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.shape >= 1.0 {
            let g: f64 = Gamma::new(self.shape, 1.0).unwrap().sample(rng);
            self.rate / g
        } else {
            let g: f64 = Gamma::new(self.shape + 1.0, 1.0).unwrap().sample(rng);
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            let ln_g = g.ln() + u.ln() / self.shape;
            (self.rate.ln() - ln_g).exp()
        }
    }
}

/// Checked inverse-gamma log-density.
pub fn log_pdf_inverse_gamma(x: f64, shape: f64, rate: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::domain(format!("inverse-gamma support is x > 0, got {x}")));
    }
    Ok(InverseGamma::new(shape, rate)?.ln_pdf(x))
}

/// Dirichlet on the `k`-simplex; the density is with respect to Lebesgue
/// measure on the first `k - 1` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Dirichlet {
    alpha: Vec<f64>,
    ln_norm: f64,
}

impl Dirichlet {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() || alpha.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(Error::domain(format!(
                "dirichlet concentrations must be positive, got {alpha:?}"
            )));
        }
        let total: f64 = alpha.iter().sum();
        let ln_norm = ln_gamma(total) - alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>();
        Ok(Self { alpha, ln_norm })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn ln_pdf(&self, w: &[f64]) -> f64 {
        if w.len() != self.alpha.len() || w.iter().any(|&x| x <= 0.0) {
            return f64::NEG_INFINITY;
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > SIMPLEX_TOL {
            return f64::NEG_INFINITY;
        }
        self.ln_norm
            + w.iter()
                .zip(&self.alpha)
                .map(|(&x, &a)| (a - 1.0) * x.ln())
                .sum::<f64>()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut g: Vec<f64> = self
            .alpha
            .iter()
            .map(|&a| Gamma::new(a, 1.0).unwrap().sample(rng))
            .collect();
        let total: f64 = g.iter().sum();
        g.iter_mut().for_each(|x| *x /= total);
        g
    }
}

/// Checked Dirichlet log-density.
pub fn log_pdf_dirichlet(w: &[f64], alpha: &[f64]) -> Result<f64> {
    if w.len() != alpha.len() {
        return Err(Error::domain("simplex point and alpha differ in length"));
    }
    if w.iter().any(|&x| !(x > 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() >= SIMPLEX_TOL {
        return Err(Error::domain(format!("{w:?} is not an interior simplex point")));
    }
    Ok(Dirichlet::new(alpha.to_vec())?.ln_pdf(w))
}

/// Inverse-Wishart `IW_p(df, scale)`.
#[derive(Debug, Clone)]
pub struct InverseWishart {
    df: f64,
    scale: DMatrix<f64>,
    /// Cholesky factor of `scale^{-1}`, the Wishart scale used for sampling.
    inv_scale_chol: DMatrix<f64>,
    ln_norm: f64,
}

impl InverseWishart {
    pub fn new(df: f64, scale: DMatrix<f64>) -> Result<Self> {
        let p = scale.nrows();
        if !(df > p as f64 - 1.0) {
            return Err(Error::domain(format!(
                "inverse-Wishart needs df > p - 1, got df={df}, p={p}"
            )));
        }
        let chol = cholesky_jitter(&scale)
            .map_err(|_| Error::domain("inverse-Wishart scale is not positive definite"))?;
        let pf = p as f64;
        let ln_norm = 0.5 * df * ln_det(&chol)
            - 0.5 * df * pf * std::f64::consts::LN_2
            - ln_multigamma(p, df / 2.0);
        let inv = chol.inverse();
        let inv_chol = cholesky_jitter(&symmetrize(inv))?;
        Ok(Self {
            df,
            scale,
            inv_scale_chol: inv_chol.l(),
            ln_norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.scale.nrows()
    }

    pub fn df(&self) -> f64 {
        self.df
    }

    pub fn scale(&self) -> &DMatrix<f64> {
        &self.scale
    }

    /// Log-density at a symmetric matrix; `-inf` if `x` is not PD.
    pub fn ln_pdf(&self, x: &DMatrix<f64>) -> f64 {
        let p = self.dim() as f64;
        let Some(ch) = Cholesky::new(x.clone()) else {
            return f64::NEG_INFINITY;
        };
        let x_inv = ch.inverse();
        let trace = (&self.scale * x_inv).trace();
        self.ln_norm - 0.5 * (self.df + p + 1.0) * ln_det(&ch) - 0.5 * trace
    }

    /// Log-density at a matrix given by its lower-triangle `vech` entries.
    pub fn ln_pdf_vech(&self, vech: &[f64]) -> f64 {
        self.ln_pdf(&unvech(vech, self.dim()))
    }

    /// Bartlett draw `W ~ Wishart(df, scale^{-1})`, returned as `W^{-1}`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let p = self.dim();
        let mut a = DMatrix::<f64>::zeros(p, p);
        for i in 0..p {
            let chi2: f64 = Gamma::new((self.df - i as f64) / 2.0, 2.0).unwrap().sample(rng);
            a[(i, i)] = chi2.sqrt();
            for j in 0..i {
                a[(i, j)] = rng.sample(StandardNormal);
            }
        }
        let la = &self.inv_scale_chol * a;
        // W = (LA)(LA)^T, so W^{-1} = (LA)^{-T} (LA)^{-1}
        let la_inv = la
            .solve_lower_triangular(&DMatrix::identity(p, p))
            .expect("Bartlett factor has a positive diagonal");
        symmetrize(la_inv.transpose() * la_inv)
    }
}

/// Checked inverse-Wishart log-density.
pub fn log_pdf_inverse_wishart(x: &DMatrix<f64>, df: f64, scale: &DMatrix<f64>) -> Result<f64> {
    if x.nrows() != scale.nrows() || x.ncols() != scale.ncols() {
        return Err(Error::domain("inverse-Wishart argument and scale differ in shape"));
    }
    if Cholesky::new(x.clone()).is_none() {
        return Err(Error::domain("inverse-Wishart argument is not positive definite"));
    }
    Ok(InverseWishart::new(df, scale.clone())?.ln_pdf(x))
}

pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Lower-triangle entries of a symmetric matrix, row by row:
/// `(0,0), (1,0), (1,1), (2,0), ...`.
pub fn vech(m: &DMatrix<f64>) -> Vec<f64> {
    let p = m.nrows();
    let mut out = Vec::with_capacity(p * (p + 1) / 2);
    for i in 0..p {
        for j in 0..=i {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn unvech(v: &[f64], p: usize) -> DMatrix<f64> {
    debug_assert_eq!(v.len(), p * (p + 1) / 2);
    let mut m = DMatrix::zeros(p, p);
    let mut k = 0;
    for i in 0..p {
        for j in 0..=i {
            m[(i, j)] = v[k];
            m[(j, i)] = v[k];
            k += 1;
        }
    }
    m
}

#[inline]
pub fn ln_pmf_poisson(y: u64, rate: f64) -> f64 {
    if rate == 0.0 {
        return if y == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    y as f64 * rate.ln() - rate - ln_factorial(y)
}

pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> Result<u64> {
    if rate == 0.0 {
        return Ok(0);
    }
    let d = rand_distr::Poisson::new(rate)
        .map_err(|e| Error::domain(format!("poisson rate {rate}: {e}")))?;
    Ok(d.sample(rng) as u64)
}

/// Draws an index with probability proportional to `exp(log_weights)`.
pub fn sample_categorical_log<R: Rng + ?Sized>(rng: &mut R, log_weights: &[f64]) -> Result<usize> {
    if log_weights.is_empty() {
        return Err(Error::domain("categorical needs at least one category"));
    }
    let total = log_sum_exp(log_weights);
    if !total.is_finite() {
        return Err(Error::domain("categorical weights are all zero or non-finite"));
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &lw) in log_weights.iter().enumerate() {
        acc += (lw - total).exp();
        if u < acc {
            return Ok(i);
        }
    }
    // rounding left a sliver at the top end
    Ok(log_weights
        .iter()
        .rposition(|w| w.is_finite())
        .unwrap_or(log_weights.len() - 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    #[test]
    fn standard_normal_at_zero() {
        let v = log_pdf_mvnormal(&[0.0], &[0.0], &DMatrix::identity(1, 1)).unwrap();
        assert!((v + 0.918_938_533_204_672_7).abs() < 1e-14);
        assert!((ln_pdf_normal(0.0, 0.0, 1.0) - v).abs() < 1e-15);
    }

    #[test]
    fn mvnormal_at_mean_is_normalizer() {
        for p in 1..6 {
            let mean = vec![0.3; p];
            let v = log_pdf_mvnormal(&mean, &mean, &DMatrix::identity(p, p)).unwrap();
            assert!((v + 0.5 * p as f64 * LN_2PI).abs() < 1e-12);
        }
    }

    #[test]
    fn mvnormal_2x2_hand_computed() {
        // det = 3, quadratic form = 2/3
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let v = log_pdf_mvnormal(&[1.0, 1.0], &[0.0, 0.0], &cov).unwrap();
        let expect = -LN_2PI - 0.5 * 3f64.ln() - 1.0 / 3.0;
        assert!((v - expect).abs() < 1e-14);
    }

    #[test]
    fn mvnormal_rejects_dimension_mismatch_and_non_pd() {
        assert!(log_pdf_mvnormal(&[0.0, 1.0], &[0.0], &DMatrix::identity(1, 1)).is_err());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 1.0]);
        assert!(matches!(
            log_pdf_mvnormal(&[0.0, 0.0], &[0.0, 0.0], &bad),
            Err(Error::Factorization(_))
        ));
    }

    #[test]
    fn inverse_gamma_values() {
        assert!((log_pdf_inverse_gamma(1.0, 1.0, 1.0).unwrap() + 1.0).abs() < 1e-14);
        assert!(log_pdf_inverse_gamma(0.0, 1.0, 1.0).is_err());
        assert!(log_pdf_inverse_gamma(-1.0, 1.0, 1.0).is_err());
        let ig = InverseGamma::new(3.0, 4.0).unwrap();
        let mode = ig.mode();
        assert!(ig.ln_pdf(mode) >= ig.ln_pdf(mode * 1.01));
        assert!(ig.ln_pdf(mode) >= ig.ln_pdf(mode * 0.99));
        assert!(InverseGamma::new(0.0, 1.0).is_err());
    }

    #[test]
    fn dirichlet_uniform_cases() {
        assert!(log_pdf_dirichlet(&[0.3, 0.7], &[1.0, 1.0]).unwrap().abs() < 1e-14);
        let v = log_pdf_dirichlet(&[0.2, 0.5, 0.3], &[1.0, 1.0, 1.0]).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-14);
        assert!(log_pdf_dirichlet(&[0.2, 0.5, 0.2], &[1.0, 1.0, 1.0]).is_err());
        assert!(log_pdf_dirichlet(&[0.0, 1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn inverse_wishart_one_dim_is_inverse_gamma() {
        let (nu, psi, x) = (6.0, 40.0, 7.0);
        let iw = log_pdf_inverse_wishart(
            &DMatrix::from_element(1, 1, x),
            nu,
            &DMatrix::from_element(1, 1, psi),
        )
        .unwrap();
        let ig = log_pdf_inverse_gamma(x, nu / 2.0, psi / 2.0).unwrap();
        assert!((iw - ig).abs() < 1e-12);
    }

    #[test]
    fn inverse_wishart_scaling_shift() {
        // log p(cX) - log p(X) = -(nu+p+1)/2 * p*log c - tr(Psi X^{-1})/2 * (1/c - 1)
        let nu = 4.0;
        let psi = DMatrix::identity(2, 2);
        let x = DMatrix::from_row_slice(2, 2, &[1.5, 0.3, 0.3, 0.8]);
        let c: f64 = 2.5;
        let iw = InverseWishart::new(nu, psi.clone()).unwrap();
        let shift = iw.ln_pdf(&(&x * c)) - iw.ln_pdf(&x);
        let tr = (psi * x.clone().try_inverse().unwrap()).trace();
        let expect = -(nu + 3.0) / 2.0 * 2.0 * c.ln() - 0.5 * tr * (1.0 / c - 1.0);
        assert!((shift - expect).abs() < 1e-12);
    }

    #[test]
    fn inverse_wishart_rejects_non_pd() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(log_pdf_inverse_wishart(&x, 4.0, &DMatrix::identity(2, 2)).is_err());
        assert!(InverseWishart::new(0.5, DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn vech_roundtrip() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        assert_eq!(vech(&m), vec![1.0, 2.0, 4.0, 3.0, 5.0, 6.0]);
        assert_eq!(unvech(&vech(&m), 3), m);
    }

    #[test]
    fn poisson_pmf_direct() {
        let v = ln_pmf_poisson(2, 2.0);
        assert!((v - (2.0 * 2f64.ln() - 2.0 - 2f64.ln())).abs() < 1e-14);
        assert_eq!(ln_pmf_poisson(0, 0.0), 0.0);
    }

    #[test]
    fn categorical_respects_zero_weights() {
        let mut rng = RngState::new(1);
        for _ in 0..1000 {
            let i = sample_categorical_log(&mut rng, &[f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY]).unwrap();
            assert_eq!(i, 1);
        }
        assert!(sample_categorical_log(&mut rng, &[f64::NEG_INFINITY]).is_err());
    }

    #[test]
    fn tiny_shape_inverse_gamma_draws_are_finite_positive() {
        let ig = InverseGamma::new(1e-3, 1e-3).unwrap();
        let mut rng = RngState::new(9);
        let draws: Vec<f64> = (0..1000).map(|_| ig.sample(&mut rng)).collect();
        assert!(draws.iter().all(|&x| x > 0.0));
    }
}
