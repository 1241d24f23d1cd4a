//! Cholesky helpers with the one-shot diagonal jitter retry.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative tolerance for the symmetry check on covariance inputs.
const SYMMETRY_TOL: f64 = 1e-12;

/// Lower Cholesky factor of a symmetric positive-definite matrix.
///
/// On failure, `1e-10 * trace / p` is added to the diagonal and the
/// factorization is retried once.
pub fn cholesky_jitter(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let p = m.nrows();
    if p == 0 || m.ncols() != p {
        return Err(Error::Factorization(format!(
            "matrix must be square and non-empty, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    check_symmetric(m)?;
    if let Some(ch) = Cholesky::new(m.clone()) {
        return Ok(ch);
    }
    let jitter = 1e-10 * m.trace().abs() / p as f64;
    let mut jittered = m.clone();
    for i in 0..p {
        jittered[(i, i)] += jitter;
    }
    log::debug!("cholesky failed, retrying with diagonal jitter {jitter:e}");
    Cholesky::new(jittered)
        .ok_or_else(|| Error::Factorization("matrix is not positive definite".into()))
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let scale = m.iter().fold(0.0f64, |a, &x| a.max(x.abs())).max(f64::MIN_POSITIVE);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::Factorization(format!(
                    "matrix is not symmetric at ({i},{j})"
                )));
            }
        }
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Factorization("matrix has non-finite entries".into()));
    }
    Ok(())
}

/// `log det` from a Cholesky factor.
pub fn ln_det(ch: &Cholesky<f64, Dyn>) -> f64 {
    let l = ch.l_dirty();
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// Solves `L z = v` for the lower factor and returns `|z|^2 = v' M^{-1} v`.
pub fn mahalanobis_sq(ch: &Cholesky<f64, Dyn>, v: &[f64]) -> f64 {
    let l = ch.l_dirty();
    let p = v.len();
    let mut z = vec![0.0; p];
    let mut acc = 0.0;
    for i in 0..p {
        let mut s = v[i];
        for (j, zj) in z.iter().enumerate().take(i) {
            s -= l[(i, j)] * zj;
        }
        z[i] = s / l[(i, i)];
        acc += z[i] * z[i];
    }
    acc
}

/// Sample mean vector and unbiased covariance of the rows of `rows`
/// (each item is one observation of dimension `p`).
pub fn mean_cov<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, p: usize) -> (DVector<f64>, DMatrix<f64>) {
    let mut mean = DVector::zeros(p);
    let mut n = 0usize;
    for r in rows.clone() {
        for j in 0..p {
            mean[j] += r[j];
        }
        n += 1;
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(p, p);
    for r in rows {
        for i in 0..p {
            let di = r[i] - mean[i];
            for j in 0..=i {
                cov[(i, j)] += di * (r[j] - mean[j]);
            }
        }
    }
    let denom = (n as f64 - 1.0).max(1.0);
    for i in 0..p {
        for j in 0..=i {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    (mean, cov)
}
