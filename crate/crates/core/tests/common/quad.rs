//! Double-exponential quadrature, refined by step halving until two
//! successive estimates agree.

use std::f64::consts::FRAC_PI_2;

const TOL: f64 = 1e-13;
const MAX_LEVELS: usize = 12;

fn refine<G: Fn(f64) -> f64>(g: G, t_max: f64) -> f64 {
    let eval = |t: f64| {
        let v = g(t);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    let mut h = 0.5;
    let mut sum = eval(0.0);
    let mut k = 1.0;
    while k * h <= t_max {
        sum += eval(k * h) + eval(-k * h);
        k += 1.0;
    }
    let mut estimate = h * sum;
    for _ in 0..MAX_LEVELS {
        h /= 2.0;
        let mut k = 1.0;
        while k * h <= t_max {
            sum += eval(k * h) + eval(-k * h);
            k += 2.0;
        }
        let next = h * sum;
        let done = (next - estimate).abs() <= TOL * next.abs().max(1.0);
        estimate = next;
        if done {
            break;
        }
    }
    estimate
}

/// ∫₀¹ f. `f` receives x and 1 − x, both computed without cancellation.
pub fn unit_interval<F: Fn(f64, f64) -> f64>(f: F) -> f64 {
    refine(
        |t| {
            let u = FRAC_PI_2 * t.sinh();
            let x = 1.0 / (1.0 + (-2.0 * u).exp());
            let xc = 1.0 / (1.0 + (2.0 * u).exp());
            let w = FRAC_PI_2 * t.cosh() / (2.0 * u.cosh().powi(2));
            if w == 0.0 || x == 0.0 || xc == 0.0 {
                0.0
            } else {
                w * f(x, xc)
            }
        },
        5.0,
    )
}

/// ∫₀^∞ f.
pub fn half_line<F: Fn(f64) -> f64>(f: F) -> f64 {
    refine(
        |t| {
            let x = (FRAC_PI_2 * t.sinh()).exp();
            let w = x * FRAC_PI_2 * t.cosh();
            if x == 0.0 || !x.is_finite() {
                0.0
            } else {
                w * f(x)
            }
        },
        5.0,
    )
}

/// ∫ f over the real line, with abscissae centred at `centre` and spread by
/// `scale`.
pub fn real_line<F: Fn(f64) -> f64>(f: F, centre: f64, scale: f64) -> f64 {
    refine(
        |t| {
            let s = FRAC_PI_2 * t.sinh();
            let w = scale * s.cosh() * FRAC_PI_2 * t.cosh();
            w * f(centre + scale * s.sinh())
        },
        4.0,
    )
}

/// KL(p ‖ q) = ∫ p (log p − log q) from log densities on (0, 1).
pub fn kl_unit<P: Fn(f64, f64) -> f64, Q: Fn(f64, f64) -> f64>(log_p: P, log_q: Q) -> f64 {
    unit_interval(|x, xc| {
        let lp = log_p(x, xc);
        let p = lp.exp();
        if p == 0.0 {
            0.0
        } else {
            p * (lp - log_q(x, xc))
        }
    })
}

pub fn kl_half_line<P: Fn(f64) -> f64, Q: Fn(f64) -> f64>(log_p: P, log_q: Q) -> f64 {
    half_line(|x| {
        let lp = log_p(x);
        let p = lp.exp();
        if p == 0.0 {
            0.0
        } else {
            p * (lp - log_q(x))
        }
    })
}

pub fn kl_real_line<P: Fn(f64) -> f64, Q: Fn(f64) -> f64>(log_p: P, log_q: Q, centre: f64, scale: f64) -> f64 {
    real_line(
        |x| {
            let lp = log_p(x);
            let p = lp.exp();
            if p == 0.0 {
                0.0
            } else {
                p * (lp - log_q(x))
            }
        },
        centre,
        scale,
    )
}
