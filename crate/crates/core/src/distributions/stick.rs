use super::special::logistic;

/// Mixture weights produced by breaking a unit stick.
///
/// `v` holds the K−1 break fractions; `pi` has K entries, the last one being
/// whatever is left of the stick so that the weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct StickWeights {
    pub pi: Vec<f64>,
    pub v: Vec<f64>,
}

impl StickWeights {
    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }
}

/// π_k = v_k ∏_{j<k}(1 − v_j) for k < K, π_K = ∏_{j<K}(1 − v_j).
///
/// `v` must lie in (0, 1); the output has `v.len() + 1` entries.
pub fn stick_break(v: &[f64]) -> StickWeights {
    let mut pi = Vec::with_capacity(v.len() + 1);
    let mut remaining = 1.0;
    for &frac in v {
        pi.push(frac * remaining);
        remaining *= 1.0 - frac;
    }
    pi.push(remaining);
    StickWeights { pi, v: v.to_vec() }
}

/// Squashes unconstrained values into break fractions with the logistic map.
pub fn logistic_stick_prep(theta: &[f64]) -> Vec<f64> {
    theta.iter().map(|&t| logistic(t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn halves_with_remainder() {
        let w = stick_break(&[0.5, 0.5, 0.5]);
        assert_eq!(w.pi, vec![0.5, 0.25, 0.125, 0.125]);
    }

    #[test]
    fn first_break_takes_everything() {
        let eps = 1e-9;
        let w = stick_break(&[1.0 - eps, 0.3, 0.7]);
        assert!((w.pi[0] - 1.0).abs() < 1e-8);
        assert!(w.pi[1..].iter().all(|&p| p < 1e-8));
    }

    #[test]
    fn logistic_prep_values() {
        let v = logistic_stick_prep(&[0.0, 20.0, -(3.0f64).ln()]);
        assert_eq!(v[0], 0.5);
        assert!((v[1] - (1.0 - 2.061_153_6e-9)).abs() < 1e-15);
        assert!((v[2] - 0.25).abs() < 1e-15);
        // zero latent → halves cascade
        let w = stick_break(&logistic_stick_prep(&[0.0; 3]));
        assert_eq!(w.pi, vec![0.5, 0.25, 0.125, 0.125]);
    }

    proptest! {
        #[test]
        fn weights_live_on_simplex(v in prop::collection::vec(1e-6f64..1.0 - 1e-6, 1..40)) {
            let w = stick_break(&v);
            let total: f64 = w.pi.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(w.pi.iter().all(|&p| p >= 0.0));
        }

        #[test]
        fn raising_first_fraction_moves_mass_forward(
            v in prop::collection::vec(1e-3f64..0.99, 2..12),
            bump in 1e-3f64..0.5,
        ) {
            let base = stick_break(&v);
            let mut raised = v.clone();
            raised[0] = (raised[0] + bump).min(0.999);
            prop_assume!(raised[0] > v[0]);
            let after = stick_break(&raised);
            prop_assert!(after.pi[0] > base.pi[0]);
            for k in 1..base.pi.len() {
                prop_assert!(after.pi[k] <= base.pi[k] + 1e-15);
            }
        }
    }
}
