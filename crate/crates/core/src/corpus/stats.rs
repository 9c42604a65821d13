use serde::{Deserialize, Serialize};

use super::CorpusError;
use crate::distributions::special::inc_gamma_pair;

/// Tail mass below which a document length counts as outside the fitted regime.
const TAIL_CUTOFF: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonFit {
    pub lambda: f64,
    /// sup_k |F_n(k) − F_λ(k)| over the integers.
    pub ks_statistic: f64,
    /// Fraction of documents whose length has both tail probabilities ≥ 1e-4.
    pub fit_fraction: f64,
}

/// P(X ≤ k) for X ~ Poisson(λ).
pub fn poisson_cdf(k: u64, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    inc_gamma_pair(k as f64 + 1.0, lambda).1
}

/// Fits a Poisson to document lengths by maximum likelihood and measures the
/// discrete Kolmogorov–Smirnov distance.
pub fn fit_poisson_length(lengths: &[usize]) -> Result<PoissonFit, CorpusError> {
    if lengths.len() < 2 {
        return Err(CorpusError::TooFewDocuments {
            needed: 2,
            got: lengths.len(),
        });
    }
    let n = lengths.len() as f64;
    let lambda = lengths.iter().sum::<usize>() as f64 / n;
    let max = *lengths.iter().max().unwrap();
    let mut counts = vec![0usize; max + 1];
    for &l in lengths {
        counts[l] += 1;
    }
    let mut ks: f64 = 0.0;
    let mut cum = 0usize;
    let mut inside = 0usize;
    for (k, &c) in counts.iter().enumerate() {
        cum += c;
        let f = poisson_cdf(k as u64, lambda);
        ks = ks.max((cum as f64 / n - f).abs());
        if c > 0 {
            let lower = f;
            let upper = if k == 0 { 1.0 } else { 1.0 - poisson_cdf(k as u64 - 1, lambda) };
            if lower >= TAIL_CUTOFF && upper >= TAIL_CUTOFF {
                inside += c;
            }
        }
    }
    // beyond the largest observation the empirical CDF is 1
    ks = ks.max(1.0 - poisson_cdf(max as u64, lambda));
    Ok(PoissonFit {
        lambda,
        ks_statistic: ks,
        fit_fraction: inside as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_lengths() {
        let fit = fit_poisson_length(&[5; 10]).unwrap();
        assert_eq!(fit.lambda, 5.0);
        // the step at 5 against Poisson(5): F(4) ≈ 0.4405, 1 − F(5) ≈ 0.3840
        assert!((fit.ks_statistic - 0.440_493_285_065_212_6).abs() < 1e-9);
        assert!(fit_poisson_length(&[3]).is_err());
    }

    #[test]
    fn cdf_matches_direct_sum() {
        let lambda: f64 = 7.3;
        let mut term = (-lambda).exp();
        let mut total = term;
        for k in 0..30u64 {
            assert!((poisson_cdf(k, lambda) - total).abs() < 1e-12);
            term *= lambda / (k + 1) as f64;
            total += term;
        }
    }
}
