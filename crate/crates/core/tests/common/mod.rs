#![allow(dead_code)]

pub mod quad;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbtm_core::corpus::BowVector;
use sbtm_core::models::{Batch, GammaDraw, ModelConfig, ModelKind, NoiseSource, Sampling, TopicModel};

pub const ALL_KINDS: [ModelKind; 6] = [
    ModelKind::Etm,
    ModelKind::SbVae,
    ModelKind::Edp,
    ModelKind::Ehdp,
    ModelKind::Detm,
    ModelKind::Dedp,
];

pub fn random_bow(rng: &mut ChaCha8Rng, vocab: usize, len: usize) -> BowVector {
    let mut counts = vec![0u32; vocab];
    for _ in 0..len {
        counts[rng.random_range(0..vocab)] += 1;
    }
    BowVector::from_counts(counts.into_iter().enumerate())
}

pub fn tiny_config(kind: ModelKind) -> ModelConfig {
    ModelConfig {
        num_topics: 4,
        embedding_dim: 4,
        hidden: vec![6, 5],
        eta_projection: 5,
        lstm_hidden: 4,
        lstm_layers: 2,
        prior_beta: 2.0,
        seed: 11,
        ..ModelConfig::new(kind)
    }
}

/// A tiny model (V=8, K=4, L=4, T=3) and a batch of two documents.
pub fn tiny_instance(config: ModelConfig, seed: u64) -> (TopicModel, Batch) {
    let vocab = 8;
    let slices = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let docs: Vec<BowVector> = (0..2).map(|_| random_bow(&mut rng, vocab, 12)).collect();
    let dynamic = config.kind.is_dynamic();
    let mut model = TopicModel::new(config, vocab, slices).unwrap();
    let mut batch = Batch::new(docs, 10);
    if dynamic {
        let freq: Vec<Vec<f64>> = (0..slices)
            .map(|_| {
                let raw: Vec<f64> = (0..vocab).map(|_| rng.random::<f64>()).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / s).collect()
            })
            .collect();
        model.set_slice_frequencies(&freq).unwrap();
        batch = batch.with_slices(vec![0, 2]);
    }
    (model, batch)
}

pub fn loss_at(model: &TopicModel, batch: &Batch, noise_seed: u64, train: bool) -> f64 {
    let mut noise = NoiseSource::with_gamma(noise_seed, GammaDraw::InverseCdf);
    let out = model.forward(batch, &mut Sampling::Stochastic(&mut noise), train, 1.0).unwrap();
    out.graph.value(out.loss).item()
}

fn group_of(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    if parts[0] == "eta" && parts.len() > 1 {
        format!("{}.{}", parts[0], parts[1])
    } else {
        parts[0].to_string()
    }
}

/// Relative L2 error between analytic and central-difference gradients for
/// every parameter group, at fixed noise.
pub fn gradient_errors(model: &mut TopicModel, batch: &Batch, noise_seed: u64, train: bool, h: f64) -> BTreeMap<String, f64> {
    let mut noise = NoiseSource::with_gamma(noise_seed, GammaDraw::InverseCdf);
    let out = model.forward(batch, &mut Sampling::Stochastic(&mut noise), train, 1.0).unwrap();
    let grads = out.graph.backward(out.loss).unwrap();
    let analytic = out.graph.param_grads(&grads);
    let mut by_id: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (id, t) in analytic {
        let e = by_id.entry(id.0).or_insert_with(|| vec![0.0; t.len()]);
        for (a, b) in e.iter_mut().zip(t.data()) {
            *a += b;
        }
    }
    let params: Vec<_> = model
        .store
        .iter()
        .filter(|(_, p)| p.requires_grad)
        .map(|(id, p)| (id, p.name.clone(), p.value.len()))
        .collect();
    let mut diff: BTreeMap<String, f64> = BTreeMap::new();
    let mut norm: BTreeMap<String, f64> = BTreeMap::new();
    for (id, name, len) in params {
        let ana = by_id.get(&id.0).cloned().unwrap_or_else(|| vec![0.0; len]);
        for i in 0..len {
            let orig = model.store.value(id).data()[i];
            model.store.value_mut(id).data_mut()[i] = orig + h;
            let up = loss_at(model, batch, noise_seed, train);
            model.store.value_mut(id).data_mut()[i] = orig - h;
            let down = loss_at(model, batch, noise_seed, train);
            model.store.value_mut(id).data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let g = group_of(&name);
            *diff.entry(g.clone()).or_default() += (fd - ana[i]).powi(2);
            *norm.entry(g).or_default() += fd * fd;
        }
    }
    diff.into_iter()
        .map(|(g, d)| {
            let n = norm[&g];
            let rel = if n > 1e-20 { (d / n).sqrt() } else { d.sqrt() };
            (g, rel)
        })
        .collect()
}
