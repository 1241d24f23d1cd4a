use crate::chain::BatchPartition;
use crate::error::{Error, Result};
use crate::math::LogSumExp;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchMeans {
    /// Log of each batch's mean weight.
    pub batch_estimates: Vec<f64>,
    /// Log of the mean of all usable weights.
    pub log_evidence: f64,
    /// Delta-method standard error on the log scale.
    pub mc_error: f64,
    pub mean_batch_log: f64,
    pub batch_size: usize,
    /// Weights that were NaN and therefore left out.
    pub skipped: usize,
}

/// Splits log weights into `batches` contiguous batches and returns the
/// overall estimate with its batch-means standard error.
///
/// NaN entries mark skipped draws: they count towards batch boundaries but
/// not towards any average.
pub fn batch_means(log_weights: &[f64], batches: usize) -> Result<BatchMeans> {
    if batches < 2 {
        return Err(Error::config("batches", "at least two batches are needed for an error estimate"));
    }
    let part = BatchPartition::new(log_weights.len(), batches)?;
    let mut total = LogSumExp::default();
    let mut used_total = 0usize;
    let mut batch_estimates = Vec::with_capacity(batches);
    for range in part.ranges() {
        let mut acc = LogSumExp::default();
        let mut used = 0usize;
        for &w in &log_weights[range] {
            if w.is_nan() {
                continue;
            }
            acc.push(w);
            total.push(w);
            used += 1;
        }
        if used == 0 {
            return Err(Error::Estimator("a batch has no usable weights".into()));
        }
        batch_estimates.push(acc.value() - (used as f64).ln());
        used_total += used;
    }
    let log_evidence = total.value() - (used_total as f64).ln();
    if !log_evidence.is_finite() {
        return Err(Error::Numerical(format!("log evidence is {log_evidence}")));
    }

    // standard error of the batch means, computed relative to the largest
    // batch so nothing overflows
    let c = batch_estimates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = batch_estimates.iter().map(|l| (l - c).exp()).collect();
    let k = batches as f64;
    let m = scaled.iter().sum::<f64>() / k;
    let ss: f64 = scaled.iter().map(|x| (x - m).powi(2)).sum();
    let se = (ss / (k * (k - 1.0))).sqrt();
    let mean_batch_log = batch_estimates.iter().sum::<f64>() / k;

    Ok(BatchMeans {
        batch_estimates,
        log_evidence,
        mc_error: se / m,
        mean_batch_log,
        batch_size: part.size,
        skipped: log_weights.len() - used_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_weights_have_zero_error() {
        let bm = batch_means(&[0.3; 20], 4).unwrap();
        assert_eq!(bm.mc_error, 0.0);
        assert!((bm.log_evidence - 0.3).abs() < 1e-15);
        assert_eq!(bm.batch_size, 5);
    }

    #[test]
    fn hand_computed_two_batches() {
        // batches (w = 1, 3) and (w = 5, 7): means 2 and 6, overall 4
        let lw: Vec<f64> = [1.0f64, 3.0, 5.0, 7.0].iter().map(|w| w.ln()).collect();
        let bm = batch_means(&lw, 2).unwrap();
        assert!((bm.log_evidence - 4f64.ln()).abs() < 1e-14);
        // se = sqrt(((2-4)^2 + (6-4)^2) / 2) = 2; relative 0.5
        assert!((bm.mc_error - 0.5).abs() < 1e-14);
        assert!((bm.mean_batch_log - 0.5 * (2f64.ln() + 6f64.ln())).abs() < 1e-14);
    }

    #[test]
    fn nan_entries_are_skipped() {
        let lw = [0.0, f64::NAN, 0.0, 0.0];
        let bm = batch_means(&lw, 2).unwrap();
        assert_eq!(bm.skipped, 1);
        assert!(bm.log_evidence.abs() < 1e-15);
    }

    #[test]
    fn extreme_scale_does_not_overflow() {
        let lw: Vec<f64> = (0..100).map(|i| 1000.0 + (i % 7) as f64).collect();
        let bm = batch_means(&lw, 10).unwrap();
        assert!(bm.log_evidence.is_finite() && bm.mc_error.is_finite());
    }

    #[test]
    fn needs_divisible_length() {
        assert!(batch_means(&[0.0; 10], 3).is_err());
        assert!(batch_means(&[0.0; 10], 1).is_err());
    }
}
