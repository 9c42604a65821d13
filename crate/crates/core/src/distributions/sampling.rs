//! Reparameterized samplers.
//!
//! Every sampler returns a [`GradSample`]: the drawn values plus the partial
//! derivative of each value with respect to each distribution parameter,
//! taken with the underlying noise held fixed. Gaussian and Kumaraswamy
//! samples are explicit transforms of noise; Gamma and Beta samples use
//! implicit differentiation of the Gamma CDF.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::special::{gamma_log_pdf_unit, inc_gamma_pair};
use super::{
    check_lengths, BetaParams, DistributionError, GammaParams, GaussianParams, KumaraswamyParams,
    MIN_PARAM, UNIT_CLAMP,
};

/// Sampled values together with ∂value/∂parameter at fixed noise.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSample {
    pub value: Vec<f64>,
    /// One entry per distribution parameter, each the same length as `value`.
    pub partials: Vec<(&'static str, Vec<f64>)>,
}

impl GradSample {
    pub fn partial(&self, param: &str) -> Option<&[f64]> {
        self.partials
            .iter()
            .find(|(name, _)| *name == param)
            .map(|(_, d)| d.as_slice())
    }
}

/// z = μ + exp(log_var / 2) ⊗ ε.
pub fn sample_gaussian_rbs(params: &GaussianParams, noise: &[f64]) -> Result<GradSample, DistributionError> {
    check_lengths(params.len(), noise.len())?;
    let mut value = Vec::with_capacity(noise.len());
    let mut d_log_var = Vec::with_capacity(noise.len());
    for ((&mu, &lv), &eps) in params.mu.iter().zip(&params.log_var).zip(noise) {
        let scaled = (0.5 * lv).exp() * eps;
        value.push(mu + scaled);
        d_log_var.push(0.5 * scaled);
    }
    Ok(GradSample {
        value,
        partials: vec![("mu", vec![1.0; noise.len()]), ("log_var", d_log_var)],
    })
}

/// Scalar Kumaraswamy transform x = (1 − u^{1/b})^{1/a} with its partials.
/// Returns (x, ∂x/∂a, ∂x/∂b); the partials vanish when x is clamped.
pub fn kumaraswamy_transform(a: f64, b: f64, u: f64) -> (f64, f64, f64) {
    let ln_u = u.ln();
    let s = (ln_u / b).exp();
    // 1 − u^{1/b}, accurate when u^{1/b} is close to one
    let one_minus_s = -(ln_u / b).exp_m1();
    let ln_base = one_minus_s.ln();
    let x = (ln_base / a).exp();
    if !(x > UNIT_CLAMP && x < 1.0 - UNIT_CLAMP) {
        return (x.clamp(UNIT_CLAMP, 1.0 - UNIT_CLAMP), 0.0, 0.0);
    }
    let dx_da = -x * ln_base / (a * a);
    let dx_db = x / (a * one_minus_s) * s * ln_u / (b * b);
    (x, dx_da, dx_db)
}

/// x = (1 − u^{1/b})^{1/a} for uniform noise u ∈ (0, 1).
pub fn sample_kumaraswamy(params: &KumaraswamyParams, noise: &[f64]) -> Result<GradSample, DistributionError> {
    check_lengths(params.len(), noise.len())?;
    if let Some(&bad) = noise.iter().find(|&&u| !(u > 0.0 && u < 1.0)) {
        return Err(DistributionError::Domain {
            function: "sample_kumaraswamy",
            value: bad,
            domain: "0 < u < 1",
        });
    }
    let n = noise.len();
    let (mut value, mut da, mut db) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for ((&a, &b), &u) in params.a.iter().zip(&params.b).zip(noise) {
        let (x, dxa, dxb) = kumaraswamy_transform(a, b, u);
        value.push(x);
        da.push(dxa);
        db.push(dxb);
    }
    Ok(GradSample {
        value,
        partials: vec![("a", da), ("b", db)],
    })
}

/// ∂z/∂shape for z ~ Gamma(shape, 1), by implicit differentiation of the CDF:
/// −(∂P/∂shape)(z) / pdf(z).
///
/// ∂P/∂shape is a central difference of the regularized incomplete gamma with
/// step 1e-5·max(1, shape), taken on whichever tail is computed accurately.
pub fn gamma_shape_grad(z: f64, shape: f64) -> f64 {
    if !(z > 0.0) || !z.is_finite() {
        return 0.0;
    }
    let h = 1e-5 * shape.max(1.0);
    let lower_tail = z < shape + 1.0;
    let cdf = |a: f64| {
        let (p, q) = inc_gamma_pair(a, z);
        if lower_tail {
            p
        } else {
            -q
        }
    };
    let dcdf_dshape = (cdf(shape + h) - cdf(shape - h)) / (2.0 * h);
    let pdf = gamma_log_pdf_unit(shape, z).exp();
    if pdf == 0.0 {
        return 0.0;
    }
    -dcdf_dshape / pdf
}

fn check_min_param(x: f64) -> Result<(), DistributionError> {
    if x < MIN_PARAM {
        Err(DistributionError::ParameterTooSmall { value: x })
    } else {
        Ok(())
    }
}

/// Draws z ~ Gamma(shape, rate) with implicit reparameterization partials
/// with respect to `shape` and `rate`.
pub fn sample_gamma_implicit<R: Rng + ?Sized>(params: &GammaParams, rng: &mut R) -> Result<GradSample, DistributionError> {
    check_min_param(params.shape)?;
    let unit = draw_unit_gamma(params.shape, rng);
    Ok(gamma_grad_sample(params, unit))
}

/// As [`sample_gamma_implicit`], but with the unit-rate draw obtained by
/// inverting the CDF at a supplied uniform. Used when the noise must be held
/// fixed across parameter perturbations.
pub fn sample_gamma_from_uniform(params: &GammaParams, u: f64) -> Result<GradSample, DistributionError> {
    check_min_param(params.shape)?;
    let unit = gamma_inverse_cdf(params.shape, u)?;
    Ok(gamma_grad_sample(params, unit))
}

fn gamma_grad_sample(params: &GammaParams, unit: f64) -> GradSample {
    let z = unit / params.rate;
    GradSample {
        value: vec![z],
        partials: vec![
            ("shape", vec![gamma_shape_grad(unit, params.shape) / params.rate]),
            ("rate", vec![-z / params.rate]),
        ],
    }
}

pub(crate) fn draw_unit_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    match Gamma::new(shape, 1.0) {
        Ok(dist) => dist.sample(rng),
        Err(_) => f64::NAN,
    }
}

/// Quantile of Gamma(shape, 1): the z with P(shape, z) = u.
pub fn gamma_inverse_cdf(shape: f64, u: f64) -> Result<f64, DistributionError> {
    if !(shape > 0.0) {
        return Err(DistributionError::Domain {
            function: "gamma_inverse_cdf",
            value: shape,
            domain: "shape > 0",
        });
    }
    if !(u > 0.0 && u < 1.0) {
        return Err(DistributionError::Domain {
            function: "gamma_inverse_cdf",
            value: u,
            domain: "0 < u < 1",
        });
    }
    let upper = u > 0.5;
    let target = if upper { 1.0 - u } else { u };
    // residual is increasing in z on both branches
    let residual = |z: f64| {
        let (p, q) = inc_gamma_pair(shape, z);
        if upper {
            target - q
        } else {
            p - target
        }
    };
    let mut lo = 0.0f64;
    let mut hi = shape.max(1.0);
    while residual(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    let mut z = 0.5 * (lo + hi);
    for _ in 0..400 {
        let r = residual(z);
        if r == 0.0 {
            return Ok(z);
        }
        if r < 0.0 {
            lo = z;
        } else {
            hi = z;
        }
        let pdf = gamma_log_pdf_unit(shape, z).exp();
        let newton = z - r / pdf;
        let next = if pdf > 0.0 && newton > lo && newton < hi {
            newton
        } else if lo > 0.0 {
            (lo * hi).sqrt()
        } else {
            0.5 * hi.min(z)
        };
        if (next - z).abs() <= 1e-15 * z.abs() {
            return Ok(next);
        }
        z = next;
    }
    Ok(z)
}

/// Composes a Beta(a, b) value and its partials from two unit Gamma draws.
pub(crate) fn beta_from_gammas(a: f64, b: f64, g1: f64, g2: f64) -> (f64, f64, f64) {
    let s = g1 + g2;
    if !(s > 0.0) || !s.is_finite() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let v = g1 / s;
    if !(v > UNIT_CLAMP && v < 1.0 - UNIT_CLAMP) {
        return (v.clamp(UNIT_CLAMP, 1.0 - UNIT_CLAMP), 0.0, 0.0);
    }
    let dg1 = gamma_shape_grad(g1, a);
    let dg2 = gamma_shape_grad(g2, b);
    let ss = s * s;
    (v, dg1 * g2 / ss, -dg2 * g1 / ss)
}

/// As [`sample_beta_implicit`], with the two unit Gamma draws obtained by
/// inverting the CDF at the supplied uniforms.
pub fn sample_beta_from_uniforms(params: &BetaParams, u1: &[f64], u2: &[f64]) -> Result<GradSample, DistributionError> {
    check_lengths(params.len(), u1.len())?;
    check_lengths(params.len(), u2.len())?;
    let n = params.len();
    let (mut value, mut da, mut db) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let (a, b) = (params.a[i], params.b[i]);
        check_min_param(a)?;
        check_min_param(b)?;
        let g1 = gamma_inverse_cdf(a, u1[i])?;
        let g2 = gamma_inverse_cdf(b, u2[i])?;
        let (v, dva, dvb) = beta_from_gammas(a, b, g1, g2);
        value.push(v);
        da.push(dva);
        db.push(dvb);
    }
    Ok(GradSample {
        value,
        partials: vec![("a", da), ("b", db)],
    })
}

/// v = g₁/(g₁ + g₂) with g₁ ~ Gamma(a, 1), g₂ ~ Gamma(b, 1); partials by the
/// chain rule through the two implicit Gamma gradients.
pub fn sample_beta_implicit<R: Rng + ?Sized>(params: &BetaParams, rng: &mut R) -> Result<GradSample, DistributionError> {
    for (&a, &b) in params.a.iter().zip(&params.b) {
        check_min_param(a)?;
        check_min_param(b)?;
    }
    let n = params.len();
    let (mut value, mut da, mut db) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for (&a, &b) in params.a.iter().zip(&params.b) {
        let g1 = draw_unit_gamma(a, rng);
        let g2 = draw_unit_gamma(b, rng);
        let (v, dva, dvb) = beta_from_gammas(a, b, g1, g2);
        value.push(v);
        da.push(dva);
        db.push(dvb);
    }
    Ok(GradSample {
        value,
        partials: vec![("a", da), ("b", db)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
    }

    #[test]
    fn gaussian_examples() {
        let p = GaussianParams::new(vec![0.0, 2.0], vec![0.0, 0.0]).unwrap();
        let s = sample_gaussian_rbs(&p, &[1.5, 0.0]).unwrap();
        assert_eq!(s.value, vec![1.5, 2.0]);
        assert_eq!(s.partial("mu").unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn gaussian_partials_match_finite_differences() {
        let mu = [0.3, -1.2, 2.0];
        let lv = [-0.5, 0.7, 0.0];
        let eps = [0.9, -1.3, 0.2];
        let p = GaussianParams::new(mu.to_vec(), lv.to_vec()).unwrap();
        let s = sample_gaussian_rbs(&p, &eps).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let f = |lv_i: f64| mu[i] + (0.5 * lv_i).exp() * eps[i];
            let fd = (f(lv[i] + h) - f(lv[i] - h)) / (2.0 * h);
            assert!(rel_err(s.partial("log_var").unwrap()[i], fd) < 1e-8);
        }
    }

    #[test]
    fn kumaraswamy_examples() {
        let (x, _, _) = kumaraswamy_transform(1.0, 1.0, 0.25);
        assert!((x - 0.75).abs() < 1e-15);
        let (x, _, _) = kumaraswamy_transform(2.0, 1.0, 0.19);
        assert!((x - 0.9).abs() < 1e-15);
    }

    #[test]
    fn kumaraswamy_partials_match_finite_differences() {
        let grid = [0.5, 1.0, 2.0, 5.0];
        let h = 1e-6;
        for &a in &grid {
            for &b in &grid {
                for &u in &[0.1, 0.45, 0.8] {
                    let (_, da, db) = kumaraswamy_transform(a, b, u);
                    let fda = (kumaraswamy_transform(a + h, b, u).0 - kumaraswamy_transform(a - h, b, u).0) / (2.0 * h);
                    let fdb = (kumaraswamy_transform(a, b + h, u).0 - kumaraswamy_transform(a, b - h, u).0) / (2.0 * h);
                    assert!(rel_err(da, fda) < 1e-6, "a={a} b={b} u={u}: {da} vs {fda}");
                    assert!(rel_err(db, fdb) < 1e-6, "a={a} b={b} u={u}: {db} vs {fdb}");
                }
            }
        }
    }

    #[test]
    fn kumaraswamy_rejects_bad_noise() {
        let p = KumaraswamyParams::new(vec![1.0], vec![1.0]).unwrap();
        assert!(sample_kumaraswamy(&p, &[0.0]).is_err());
        assert!(sample_kumaraswamy(&p, &[1.0]).is_err());
    }

    #[test]
    fn gamma_rate_partial_is_scaling() {
        let params = GammaParams::new(2.0, 2.0).unwrap();
        // unit draw 6 → z = 3, ∂z/∂rate = −z/rate
        let s = gamma_grad_sample(&params, 6.0);
        assert_eq!(s.value[0], 3.0);
        assert_eq!(s.partial("rate").unwrap()[0], -1.5);
    }

    #[test]
    fn gamma_shape_one_inverse_is_exponential() {
        for &u in &[0.01, 0.3, 0.5, 0.9, 0.999] {
            let z = gamma_inverse_cdf(1.0, u).unwrap();
            assert!(rel_err(z, -(1.0f64 - u).ln()) < 1e-13);
        }
    }

    #[test]
    fn gamma_rejects_tiny_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = GammaParams { shape: 5e-4, rate: 1.0 };
        assert!(matches!(
            sample_gamma_implicit(&p, &mut rng),
            Err(DistributionError::ParameterTooSmall { .. })
        ));
        let beta = BetaParams::new(vec![1.0], vec![1e-4]).unwrap();
        assert!(sample_beta_implicit(&beta, &mut rng).is_err());
    }

    #[test]
    fn beta_draws_have_expected_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let sym = BetaParams::new(vec![3.0; n], vec![3.0; n]).unwrap();
        let s = sample_beta_implicit(&sym, &mut rng).unwrap();
        let mean: f64 = s.value.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.005);
        let skew = BetaParams::new(vec![2.0; n], vec![3.0; n]).unwrap();
        let s = sample_beta_implicit(&skew, &mut rng).unwrap();
        let mean: f64 = s.value.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.4).abs() < 0.01);
    }
}
