//! Parameter bundles, reparameterizable samplers, stick-breaking transforms and
//! the closed-form KL divergences required by the model ELBOs.

pub mod kl;
pub mod sampling;
pub mod special;
pub mod stick;

use thiserror::Error;

pub use kl::{
    kld_beta_beta, kld_gamma_gamma, kld_gaussian_gaussian, kld_kumaraswamy_beta, DEFAULT_TAYLOR_TERMS,
};
pub use sampling::{
    gamma_inverse_cdf, gamma_shape_grad, sample_beta_from_uniforms, sample_beta_implicit, sample_gamma_from_uniform, sample_gamma_implicit,
    sample_gaussian_rbs, sample_kumaraswamy, GradSample,
};
pub use special::{digamma, ln_gamma, log_beta_fn, reg_inc_gamma, trigamma, EULER_GAMMA};
pub use stick::{logistic_stick_prep, stick_break, StickWeights};

/// Samples in (0, 1) are clamped to `[UNIT_CLAMP, 1 - UNIT_CLAMP]` before logs.
pub const UNIT_CLAMP: f64 = 1e-6;

/// Smallest distribution parameter accepted by the implicit Gamma/Beta samplers.
pub const MIN_PARAM: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("{function}: argument {value} outside domain ({domain})")]
    Domain {
        function: &'static str,
        value: f64,
        domain: &'static str,
    },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("parameter {value} is below the numerically stable minimum {MIN_PARAM}")]
    ParameterTooSmall { value: f64 },
}

fn check_lengths(left: usize, right: usize) -> Result<(), DistributionError> {
    if left == right {
        Ok(())
    } else {
        Err(DistributionError::LengthMismatch { left, right })
    }
}

fn check_all_positive(function: &'static str, xs: &[f64]) -> Result<(), DistributionError> {
    for &x in xs {
        if !(x > 0.0) {
            return Err(DistributionError::Domain {
                function,
                value: x,
                domain: "parameter > 0",
            });
        }
    }
    Ok(())
}

/// Diagonal Gaussian parameterized by mean and log-variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl GaussianParams {
    pub fn new(mu: Vec<f64>, log_var: Vec<f64>) -> Result<Self, DistributionError> {
        check_lengths(mu.len(), log_var.len())?;
        if let Some(&bad) = log_var.iter().find(|v| !v.is_finite()) {
            return Err(DistributionError::Domain {
                function: "GaussianParams::new",
                value: bad,
                domain: "finite log-variance",
            });
        }
        Ok(Self { mu, log_var })
    }

    /// N(0, I) of dimension `dim`.
    pub fn standard(dim: usize) -> Self {
        Self {
            mu: vec![0.0; dim],
            log_var: vec![0.0; dim],
        }
    }

    /// Isotropic Gaussian centred at `mu` with variance `var`.
    pub fn isotropic(mu: Vec<f64>, var: f64) -> Self {
        let log_var = vec![var.ln(); mu.len()];
        Self { mu, log_var }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }
}

/// Elementwise Beta(a, b).
#[derive(Debug, Clone, PartialEq)]
pub struct BetaParams {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl BetaParams {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self, DistributionError> {
        check_lengths(a.len(), b.len())?;
        check_all_positive("BetaParams::new", &a)?;
        check_all_positive("BetaParams::new", &b)?;
        Ok(Self { a, b })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn mean(&self) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(a, b)| a / (a + b)).collect()
    }
}

/// Gamma in shape/rate form: density ∝ z^{shape−1} e^{−rate·z}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl GammaParams {
    pub fn new(shape: f64, rate: f64) -> Result<Self, DistributionError> {
        check_all_positive("GammaParams::new", &[shape, rate])?;
        Ok(Self { shape, rate })
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }
}

/// Elementwise Kumaraswamy(a, b), density a·b·x^{a−1}(1 − x^a)^{b−1}.
#[derive(Debug, Clone, PartialEq)]
pub struct KumaraswamyParams {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl KumaraswamyParams {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self, DistributionError> {
        check_lengths(a.len(), b.len())?;
        check_all_positive("KumaraswamyParams::new", &a)?;
        check_all_positive("KumaraswamyParams::new", &b)?;
        Ok(Self { a, b })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// E[x] = b·B(1 + 1/a, b).
    pub fn mean(&self) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(&a, &b)| b * special::log_beta_raw(1.0 + 1.0 / a, b).exp())
            .collect()
    }
}
