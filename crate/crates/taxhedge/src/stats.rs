//! Deterministic reductions for Monte Carlo estimates.
//!
//! All estimates are reduced by pairwise summation over the path-ordered
//! sample vector, so results are bit-stable regardless of how many worker
//! threads produced the samples.

/// Pairwise (cascade) summation; deterministic for a fixed input order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const CUTOFF: usize = 32;
    if xs.len() <= CUTOFF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// A Monte Carlo mean together with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanWithError {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl MeanWithError {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        assert!(n >= 2, "standard error needs at least two samples");
        let nf = n as f64;
        let mean = pairwise_sum(samples) / nf;
        let centered_sq: Vec<f64> = samples.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = pairwise_sum(&centered_sq) / (nf - 1.0);
        Self { mean, std_error: (var / nf).sqrt(), n }
    }

    /// |mean| measured in standard errors (0 if the error is 0).
    pub fn z_score(&self) -> f64 {
        if self.std_error == 0.0 {
            if self.mean == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.mean.abs() / self.std_error
        }
    }
}

/// Sample covariance of paired samples, with the standard error of the
/// mean cross-product (adequate for "is this covariance zero" tests).
pub fn covariance_with_error(xs: &[f64], ys: &[f64]) -> MeanWithError {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    assert!(n >= 2);
    let mx = pairwise_sum(xs) / n as f64;
    let my = pairwise_sum(ys) / n as f64;
    let products: Vec<f64> = xs
        .iter()
        .zip(ys.iter())
        .map(|(x, y)| (x - mx) * (y - my))
        .collect();
    MeanWithError::from_samples(&products)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_small_input() {
        let xs: Vec<f64> = (0..7).map(|i| i as f64 * 0.1).collect();
        let naive: f64 = xs.iter().sum();
        assert_eq!(pairwise_sum(&xs), naive);
    }

    #[test]
    fn pairwise_is_split_invariant() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 2654435761u64 % 1000) as f64 - 500.0) * 1e-3).collect();
        let a = pairwise_sum(&xs);
        let b = pairwise_sum(&xs);
        assert_eq!(a, b);
        // close to exact (f64 sum of ~1000 well-scaled values)
        let exact: f64 = xs.iter().fold(0.0f64, |acc, &x| acc + x);
        assert!((a - exact).abs() < 1e-9);
    }

    #[test]
    fn mean_and_error_basic() {
        let m = MeanWithError::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        // sample variance = 5/3, se = sqrt(5/12)
        assert!((m.std_error - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert_eq!(m.n, 4);
    }

    #[test]
    fn covariance_of_identical_series_is_variance() {
        // mean of centered products: sum((x-3)^2)/5 = 10/5
        let xs = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let c = covariance_with_error(&xs, &xs);
        assert!((c.mean - 2.0).abs() < 1e-12);
    }
}
