use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.002,
            beta1: 0.95,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 1.2e-6,
        }
    }
}

/// Adam with bias correction and decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let m: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Self {
            config,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients currently stored in `store`.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.requires_grad {
                continue;
            }
            let grad = p.grad.data();
            let value = p.value.data_mut();
            for i in 0..value.len() {
                let g = grad[i];
                let mi = &mut m.data_mut()[i];
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * g;
                let mhat = *mi / bc1;
                let vi = &mut v.data_mut()[i];
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * g * g;
                let vhat = *vi / bc2;
                value[i] -= c.lr * c.weight_decay * value[i];
                value[i] -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the factor applied (1 when no clipping was needed).
pub fn clip_gradients(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store
        .iter()
        .filter(|(_, p)| p.requires_grad)
        .map(|(_, p)| p.grad.norm_sq())
        .sum::<f64>()
        .sqrt();
    if !(norm > max_norm) || max_norm <= 0.0 {
        return 1.0;
    }
    let scale = max_norm / norm;
    for p in store.iter_mut() {
        p.grad.data_mut().iter_mut().for_each(|g| *g *= scale);
    }
    scale
}

/// Linear KL warm-up: min(1, epoch / warmup), or 1 when `warmup` is 0.
pub fn kl_anneal_weight(epoch: usize, warmup: usize) -> f64 {
    if warmup == 0 {
        1.0
    } else {
        (epoch as f64 / warmup as f64).min(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("x", Tensor::scalar(x)).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = scalar_store(0.7);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg, &s);
        adam.step(&mut s);
        assert_eq!(s.value(crate::autodiff::ParamId(0)).item(), 0.7);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = scalar_store(1.0);
        s.iter_mut().next().unwrap().grad = Tensor::scalar(1.0);
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.1,
                weight_decay: 0.0,
                eps: 0.0,
                ..AdamConfig::default()
            },
            &s,
        );
        adam.step(&mut s);
        assert!((s.value(crate::autodiff::ParamId(0)).item() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut s = scalar_store(1.0);
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.05,
                weight_decay: 0.0,
                ..AdamConfig::default()
            },
            &s,
        );
        for _ in 0..100 {
            let x = s.value(crate::autodiff::ParamId(0)).item();
            s.iter_mut().next().unwrap().grad = Tensor::scalar(2.0 * x);
            adam.step(&mut s);
        }
        assert!(s.value(crate::autodiff::ParamId(0)).item().abs() < 0.05);
    }

    #[test]
    fn clipping_examples() {
        let mut s = scalar_store(0.0);
        s.iter_mut().next().unwrap().grad = Tensor::scalar(1.0);
        assert_eq!(clip_gradients(&mut s, 2.0), 1.0);
        s.iter_mut().next().unwrap().grad = Tensor::scalar(4.0);
        assert_eq!(clip_gradients(&mut s, 2.0), 0.5);
        assert_eq!(s.get(crate::autodiff::ParamId(0)).grad.item(), 2.0);
    }

    #[test]
    fn anneal_ramp() {
        assert_eq!(kl_anneal_weight(0, 10), 0.0);
        assert_eq!(kl_anneal_weight(5, 10), 0.5);
        assert_eq!(kl_anneal_weight(100, 10), 1.0);
        assert_eq!(kl_anneal_weight(0, 0), 1.0);
    }
}
