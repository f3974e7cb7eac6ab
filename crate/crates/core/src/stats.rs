//! Replica statistics and least-squares fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean of independent replica estimates with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { mean: value, stderr: 0.0 }
    }

    /// Mean and `sd / sqrt(R)` over replica means.
    pub fn from_replicas(means: &[f64]) -> Self {
        let r = means.len() as f64;
        let mean = means.iter().sum::<f64>() / r;
        if means.len() < 2 {
            return Self { mean, stderr: f64::NAN };
        }
        let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (r - 1.0);
        Self { mean, stderr: (var / r).sqrt() }
    }
}

/// Running per-replica accumulator with batch means for an internal error bar.
#[derive(Debug, Clone)]
pub struct BatchAccumulator {
    batch_len: u64,
    in_batch: u64,
    batch_sum: f64,
    batches: Vec<f64>,
    total: f64,
    count: u64,
}

impl BatchAccumulator {
    pub fn new(n_steps: u64, n_batches: u64) -> Self {
        Self {
            batch_len: (n_steps / n_batches.max(1)).max(1),
            in_batch: 0,
            batch_sum: 0.0,
            batches: Vec::with_capacity(n_batches as usize),
            total: 0.0,
            count: 0,
        }
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.batch_sum += x;
        self.total += x;
        self.count += 1;
        self.in_batch += 1;
        if self.in_batch == self.batch_len {
            self.batches.push(self.batch_sum / self.batch_len as f64);
            self.batch_sum = 0.0;
            self.in_batch = 0;
        }
    }

    pub fn mean(&self) -> f64 {
        self.total / self.count.max(1) as f64
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Batch-means standard error of this replica's mean.
    pub fn batch_stderr(&self) -> f64 {
        Estimate::from_replicas(&self.batches).stderr
    }
}

/// True if some replica mean deviates from the grand mean by more than
/// `k` pooled within-replica standard errors.
pub fn replicas_disagree(means: &[f64], within_stderr: &[f64], k: f64) -> bool {
    let n = within_stderr.len() as f64;
    let pooled = (within_stderr.iter().map(|s| s * s).sum::<f64>() / n).sqrt();
    let grand = means.iter().sum::<f64>() / means.len() as f64;
    if !(pooled > 0.0) {
        return means.iter().any(|m| (m - grand).abs() > 1e-12 * (1.0 + grand.abs()));
    }
    means.iter().any(|m| (m - grand).abs() > k * pooled)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub intercept_stderr: f64,
    pub rms: f64,
}

/// Ordinary least squares `y = intercept + slope * x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    if n != y.len() || n < 2 {
        return Err(Error::Precondition(format!("linear fit needs >= 2 paired points, got {n}")));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Precondition("degenerate abscissae".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let rms = (ssr / nf).sqrt();
    let (slope_stderr, intercept_stderr) = if n > 2 {
        let s2 = ssr / (nf - 2.0);
        ((s2 / sxx).sqrt(), (s2 * (1.0 / nf + mx * mx / sxx)).sqrt())
    } else {
        (0.0, 0.0)
    };
    Ok(LinearFit { slope, intercept, slope_stderr, intercept_stderr, rms })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replica_estimate() {
        let e = Estimate::from_replicas(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        assert!((e.stderr - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn fit_recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 1.5 - 0.5 * v).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-14 && (f.intercept - 1.5).abs() < 1e-14);
        assert!(f.rms < 1e-14);
        assert!(linear_fit(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn batches_and_disagreement() {
        let mut acc = BatchAccumulator::new(100, 10);
        for i in 0..100 {
            acc.push((i % 2) as f64);
        }
        assert_eq!(acc.mean(), 0.5);
        assert_eq!(acc.count(), 100);
        assert!(replicas_disagree(&[0.0, 1.0], &[0.01, 0.01], 6.0));
        assert!(!replicas_disagree(&[0.0, 0.01], &[0.01, 0.01], 6.0));
    }
}
