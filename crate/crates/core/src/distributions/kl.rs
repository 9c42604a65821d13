//! Closed-form KL divergences KL(variational ‖ prior).
//!
//! The scalar `*_grad` helpers return the divergence together with its
//! partial derivatives with respect to the variational parameters (and, where
//! a model learns it, the prior concentration). Model code feeds these into
//! the autodiff graph as custom elementwise nodes.

use super::special::{digamma_raw, ln_gamma_raw, log_beta_raw, trigamma_raw, EULER_GAMMA};
use super::{
    check_all_positive, check_lengths, BetaParams, DistributionError, GammaParams, GaussianParams,
    KumaraswamyParams,
};

/// Default number of Taylor terms in the Kumaraswamy–Beta divergence.
pub const DEFAULT_TAYLOR_TERMS: usize = 10;

/// KL between diagonal Gaussians, summed over dimensions.
pub fn kld_gaussian_gaussian(p: &GaussianParams, q: &GaussianParams) -> Result<f64, DistributionError> {
    check_lengths(p.len(), q.len())?;
    let mut total = 0.0;
    for i in 0..p.len() {
        total += gaussian_kl_scalar(p.mu[i], p.log_var[i], q.mu[i], q.log_var[i]);
    }
    Ok(total)
}

pub(crate) fn gaussian_kl_scalar(mu_p: f64, lv_p: f64, mu_q: f64, lv_q: f64) -> f64 {
    let diff = mu_p - mu_q;
    0.5 * (lv_q - lv_p - 1.0 + (diff * diff + lv_p.exp()) / lv_q.exp())
}

/// KL(Beta(a, b) ‖ Beta(c, d)) for scalars.
pub fn beta_kl_scalar(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let psi_ab = digamma_raw(a + b);
    log_beta_raw(c, d) - log_beta_raw(a, b) - (c - a) * digamma_raw(a) - (d - b) * digamma_raw(b)
        + (c - a + d - b) * psi_ab
}

/// KL(Beta(a, b) ‖ Beta(c, d)) with partials (∂a, ∂b, ∂d).
pub fn beta_kl_grad(a: f64, b: f64, c: f64, d: f64) -> (f64, f64, f64, f64) {
    let tri_ab = trigamma_raw(a + b);
    let total = c - a + d - b;
    let da = -(c - a) * trigamma_raw(a) + total * tri_ab;
    let db = -(d - b) * trigamma_raw(b) + total * tri_ab;
    let dd = digamma_raw(d) - digamma_raw(c + d) - digamma_raw(b) + digamma_raw(a + b);
    (beta_kl_scalar(a, b, c, d), da, db, dd)
}

/// KL between elementwise Beta distributions, summed.
pub fn kld_beta_beta(p: &BetaParams, q: &BetaParams) -> Result<f64, DistributionError> {
    check_lengths(p.len(), q.len())?;
    Ok((0..p.len()).map(|i| beta_kl_scalar(p.a[i], p.b[i], q.a[i], q.b[i])).sum())
}

/// The per-stick Beta divergence against Beta(1, β) in the literal form
/// printed for the EDP objective (digammas evaluated at 1 and β). Kept for
/// auditing against [`beta_kl_scalar`]; it is not a valid KL in general.
pub fn beta_kl_printed_form(a: f64, b: f64, beta: f64) -> f64 {
    (log_beta_raw(a, b) - log_beta_raw(1.0, beta)) - (a - 1.0) * digamma_raw(1.0) - (b - beta) * digamma_raw(beta)
        + (a - 1.0 + b - beta) * digamma_raw(1.0 + beta)
}

/// KL(Gamma(shape_p, rate_p) ‖ Gamma(shape_q, rate_q)).
pub fn kld_gamma_gamma(p: &GammaParams, q: &GammaParams) -> f64 {
    gamma_kl_grad(p.shape, p.rate, q.shape, q.rate).0
}

/// Gamma KL in shape/rate form with partials (∂shape_p, ∂rate_p).
pub fn gamma_kl_grad(shape_p: f64, rate_p: f64, shape_q: f64, rate_q: f64) -> (f64, f64, f64) {
    let value = (shape_p - shape_q) * digamma_raw(shape_p) - ln_gamma_raw(shape_p) + ln_gamma_raw(shape_q)
        + shape_q * (rate_p.ln() - rate_q.ln())
        + shape_p * (rate_q - rate_p) / rate_p;
    let d_shape = (shape_p - shape_q) * trigamma_raw(shape_p) + rate_q / rate_p - 1.0;
    let d_rate = shape_q / rate_p - shape_p * rate_q / (rate_p * rate_p);
    (value, d_shape, d_rate)
}

/// KL(Kumaraswamy(a, b) ‖ Beta(1, β)) with the infinite series truncated
/// after `terms` summands. Returns (value, ∂a, ∂b).
pub fn kumaraswamy_beta_kl_grad(a: f64, b: f64, beta: f64, terms: usize) -> (f64, f64, f64) {
    let psi_b = digamma_raw(b);
    let head = -EULER_GAMMA - psi_b - 1.0 / b;
    let mut series = 0.0;
    let mut series_da = 0.0;
    let mut series_db = 0.0;
    for m in 1..=terms {
        let m = m as f64;
        let x = m / a;
        let denom = m + a * b;
        let beta_fn = log_beta_raw(x, b).exp();
        let psi_xb = digamma_raw(x + b);
        let dbeta_da = beta_fn * (digamma_raw(x) - psi_xb) * (-m / (a * a));
        let dbeta_db = beta_fn * (psi_b - psi_xb);
        series += beta_fn / denom;
        series_da += dbeta_da / denom - beta_fn * b / (denom * denom);
        series_db += dbeta_db / denom - beta_fn * a / (denom * denom);
    }
    let value = (a - 1.0) / a * head + (a * b).ln() + log_beta_raw(1.0, beta) - (b - 1.0) / b
        + (beta - 1.0) * b * series;
    let da = head / (a * a) + 1.0 / a + (beta - 1.0) * b * series_da;
    let db = (a - 1.0) / a * (-trigamma_raw(b) + 1.0 / (b * b)) + 1.0 / b - 1.0 / (b * b)
        + (beta - 1.0) * (series + b * series_db);
    (value, da, db)
}

/// KL(Kumaraswamy(a, b) ‖ Beta(1, β)) summed over elements.
pub fn kld_kumaraswamy_beta(q: &KumaraswamyParams, prior_beta: f64, taylor_terms: usize) -> Result<f64, DistributionError> {
    check_all_positive("kld_kumaraswamy_beta", &[prior_beta])?;
    if taylor_terms == 0 {
        return Err(DistributionError::Domain {
            function: "kld_kumaraswamy_beta",
            value: 0.0,
            domain: "taylor_terms >= 1",
        });
    }
    Ok(q
        .a
        .iter()
        .zip(&q.b)
        .map(|(&a, &b)| kumaraswamy_beta_kl_grad(a, b, prior_beta, taylor_terms).0)
        .sum())
}
