//! Synthetic corpora with known topics, for recovery experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal, Poisson};

use crate::corpus::BowVector;
use crate::distributions::stick_break;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub docs: usize,
    pub vocab: usize,
    pub topics: usize,
    /// GEM concentration of each document's truncated stick.
    pub concentration: f64,
    pub mean_length: f64,
    /// Probability mass a topic puts on its own block of words.
    pub block_mass: f64,
    /// Amplitude of the random within-block log-probability offsets.
    pub spread: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            docs: 2000,
            vocab: 50,
            topics: 3,
            concentration: 2.0,
            mean_length: 60.0,
            block_mass: 0.95,
            spread: 0.3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub docs: Vec<BowVector>,
    /// True topic-word distributions, one row per topic.
    pub topics: Vec<Vec<f64>>,
    /// True per-document topic proportions.
    pub proportions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct DynamicSyntheticCorpus {
    pub docs: Vec<BowVector>,
    /// 0-based slice of each document.
    pub slices: Vec<usize>,
    /// True topic-word distributions per slice: `topics[t][k][w]`.
    pub topics: Vec<Vec<Vec<f64>>>,
    pub drifting_topic: usize,
    pub drifting_word: usize,
}

impl DynamicSyntheticCorpus {
    /// Probability of the drifting word in the drifting topic, per slice.
    pub fn drift_trajectory(&self) -> Vec<f64> {
        self.topics.iter().map(|t| t[self.drifting_topic][self.drifting_word]).collect()
    }
}

fn block_logits(config: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let v = config.vocab;
    let k = config.topics;
    let block = v / k;
    (0..k)
        .map(|t| {
            let lo = t * block;
            let hi = if t + 1 == k { v } else { lo + block };
            let inside = config.block_mass / (hi - lo) as f64;
            let outside = (1.0 - config.block_mass) / (v - (hi - lo)).max(1) as f64;
            (0..v)
                .map(|w| {
                    let base = if (lo..hi).contains(&w) { inside } else { outside };
                    // mild within-block variation so words have a ranking
                    base.ln() + config.spread * rng.random::<f64>()
                })
                .collect()
        })
        .collect()
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn draw_categorical(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

fn draw_document(
    config: &SyntheticConfig,
    topics: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) -> (BowVector, Vec<f64>) {
    let stick = Beta::new(1.0, config.concentration).expect("positive concentration");
    let lengths = Poisson::new(config.mean_length).expect("positive mean length");
    let v: Vec<f64> = (0..config.topics - 1).map(|_| stick.sample(rng)).collect();
    let pi = stick_break(&v).pi;
    let mix: Vec<f64> = (0..config.vocab)
        .map(|w| pi.iter().zip(topics).map(|(p, row)| p * row[w]).sum())
        .collect();
    loop {
        let n = lengths.sample(rng) as usize;
        if n == 0 {
            continue;
        }
        let mut counts = vec![0u32; config.vocab];
        for _ in 0..n {
            counts[draw_categorical(&mix, rng)] += 1;
        }
        return (BowVector::from_counts(counts.into_iter().enumerate()), pi);
    }
}

/// Documents from a truncated stick-breaking mixture over block-structured
/// topics: π_d from GEM(concentration) truncated at `topics`, lengths
/// Poisson(mean_length), words from Σ_k π_dk β_k.
pub fn generate_static(config: &SyntheticConfig, seed: u64) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topics: Vec<Vec<f64>> = block_logits(config, &mut rng).iter().map(|r| softmax(r)).collect();
    let mut docs = Vec::with_capacity(config.docs);
    let mut proportions = Vec::with_capacity(config.docs);
    for _ in 0..config.docs {
        let (doc, pi) = draw_document(config, &topics, &mut rng);
        docs.push(doc);
        proportions.push(pi);
    }
    SyntheticCorpus {
        docs,
        topics,
        proportions,
    }
}

/// As [`generate_static`] over `slices` time slices, with `docs` split evenly
/// between them. The logit of one word of topic 0 follows a Gaussian random
/// walk with the given drift, starting from that topic's most probable
/// word; the other topics stay fixed.
pub fn generate_dynamic(config: &SyntheticConfig, slices: usize, drift: f64, walk_sd: f64, seed: u64) -> DynamicSyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut logits = block_logits(config, &mut rng);
    let word = (0..config.vocab)
        .max_by(|&a, &b| logits[0][a].total_cmp(&logits[0][b]))
        .unwrap_or(0);
    let noise = Normal::new(drift, walk_sd).expect("finite walk");
    let mut topics = Vec::with_capacity(slices);
    let mut docs = Vec::with_capacity(config.docs);
    let mut labels = Vec::with_capacity(config.docs);
    let per_slice = config.docs / slices.max(1);
    for t in 0..slices {
        if t > 0 {
            logits[0][word] += noise.sample(&mut rng);
        }
        let probs: Vec<Vec<f64>> = logits.iter().map(|r| softmax(r)).collect();
        for _ in 0..per_slice {
            docs.push(draw_document(config, &probs, &mut rng).0);
            labels.push(t);
        }
        topics.push(probs);
    }
    DynamicSyntheticCorpus {
        docs,
        slices: labels,
        topics,
        drifting_topic: 0,
        drifting_word: word,
    }
}

/// Total-variation distance between two distributions.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// For each true topic, the learned topic that minimizes the mean TV
/// distance under an injective assignment (exhaustive search), and that
/// mean distance.
pub fn best_alignment(truth: &[Vec<f64>], learned: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let k = truth.len();
    let mut best = (Vec::new(), f64::INFINITY);
    let mut current = Vec::with_capacity(k);
    let mut used = vec![false; learned.len()];
    fn search(
        truth: &[Vec<f64>],
        learned: &[Vec<f64>],
        current: &mut Vec<usize>,
        used: &mut [bool],
        cost: f64,
        best: &mut (Vec<usize>, f64),
    ) {
        if cost >= best.1 {
            return;
        }
        let i = current.len();
        if i == truth.len() {
            *best = (current.clone(), cost);
            return;
        }
        for j in 0..learned.len() {
            if !used[j] {
                used[j] = true;
                current.push(j);
                let c = total_variation(&truth[i], &learned[j]);
                search(truth, learned, current, used, cost + c, best);
                current.pop();
                used[j] = false;
            }
        }
    }
    search(truth, learned, &mut current, &mut used, 0.0, &mut best);
    let mean = best.1 / k.max(1) as f64;
    (best.0, mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topics_are_separated() {
        let c = generate_static(&SyntheticConfig { docs: 10, ..Default::default() }, 1);
        assert_eq!(c.docs.len(), 10);
        for (i, a) in c.topics.iter().enumerate() {
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for b in &c.topics[i + 1..] {
                assert!(total_variation(a, b) > 0.8);
            }
        }
    }

    #[test]
    fn alignment_finds_permutation() {
        let t = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let l = vec![vec![0.0, 0.0, 1.0], vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]];
        let (perm, cost) = best_alignment(&t, &l);
        assert_eq!(perm, vec![2, 1]);
        assert_eq!(cost, 0.0);
    }

    #[test]
    fn drift_moves_the_word() {
        let c = generate_dynamic(&SyntheticConfig { docs: 50, ..Default::default() }, 5, 0.8, 0.1, 2);
        let traj = c.drift_trajectory();
        assert_eq!(traj.len(), 5);
        assert!(traj[4] > traj[0]);
        assert_eq!(c.slices.len(), 50);
    }
}
