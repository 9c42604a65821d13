use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::distributions::sampling::draw_unit_gamma;
use crate::distributions::{gamma_inverse_cdf, DistributionError};

/// How unit-rate Gamma variates are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaDraw {
    /// Marsaglia–Tsang rejection sampling. Fast, but the number of uniforms
    /// consumed depends on the shape, so perturbed parameters see new noise.
    Rejection,
    /// Inverse CDF of one uniform. The noise stays fixed when the shape
    /// changes, which finite-difference checks rely on.
    InverseCdf,
}

/// Seeded source of all randomness used by a forward pass.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    rng: ChaCha8Rng,
    gamma: GammaDraw,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self::with_gamma(seed, GammaDraw::Rejection)
    }

    pub fn with_gamma(seed: u64, gamma: GammaDraw) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            gamma,
        }
    }

    pub fn from_rng(rng: ChaCha8Rng, gamma: GammaDraw) -> Self {
        Self { rng, gamma }
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.rng.sample(StandardNormal)).collect()
    }

    /// Uniforms in the open interval (0, 1).
    pub fn uniforms(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.open_uniform()).collect()
    }

    fn open_uniform(&mut self) -> f64 {
        loop {
            let u: f64 = self.rng.random();
            if u > 0.0 {
                return u;
            }
        }
    }

    pub fn unit_gamma(&mut self, shape: f64) -> Result<f64, DistributionError> {
        match self.gamma {
            GammaDraw::Rejection => Ok(draw_unit_gamma(shape, &mut self.rng)),
            GammaDraw::InverseCdf => {
                let u = self.open_uniform();
                gamma_inverse_cdf(shape, u)
            }
        }
    }
}

/// Whether latent variables are sampled or replaced by their means.
#[derive(Debug)]
pub enum Sampling<'a> {
    Stochastic(&'a mut NoiseSource),
    /// Deterministic evaluation at the variational means; no gradients flow
    /// through the stick fractions in this mode.
    Mean,
}

impl Sampling<'_> {
    pub fn is_mean(&self) -> bool {
        matches!(self, Sampling::Mean)
    }
}
