use serde::{Deserialize, Serialize};

use super::EvidenceReport;
use crate::error::Result;

/// Ratio of Monte Carlo errors at sample sizes `N` and `2N`.
///
/// With finite weight variance the error scales like `N^{-1/2}`, so the
/// ratio should be near `1/sqrt(2)`. Ratios outside `[0.5, 1.0]` are
/// flagged; a ratio near one suggests the weights have heavy tails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceDiagnostic {
    pub n: usize,
    pub mc_error_n: f64,
    pub mc_error_2n: f64,
    pub ratio: f64,
    pub expected_ratio: f64,
    pub flagged: bool,
}

/// Ratios inside this band are consistent with finite weight variance.
pub const RATIO_BAND: (f64, f64) = (0.5, 1.0);

/// Runs `estimate(n)` and `estimate(2n)` and compares their errors. The
/// closure should use a fresh seed for each size.
pub fn finite_variance_check(
    n: usize,
    mut estimate: impl FnMut(usize) -> Result<EvidenceReport>,
) -> Result<VarianceDiagnostic> {
    let a = estimate(n)?;
    let b = estimate(2 * n)?;
    let e1 = a.mc_error.unwrap_or(f64::NAN);
    let e2 = b.mc_error.unwrap_or(f64::NAN);
    // two zero errors (constant weights) count as a ratio of one
    let ratio = if e1 == 0.0 && e2 == 0.0 { 1.0 } else { e2 / e1 };
    Ok(VarianceDiagnostic {
        n,
        mc_error_n: e1,
        mc_error_2n: e2,
        ratio,
        expected_ratio: std::f64::consts::FRAC_1_SQRT_2,
        flagged: !(RATIO_BAND.0..=RATIO_BAND.1).contains(&ratio),
    })
}
