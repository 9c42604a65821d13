use std::collections::{BTreeMap, BTreeSet};

use super::EvalError;
use crate::corpus::BowVector;

/// Document-level word and word-pair counts over a reference corpus.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CooccurrenceStats {
    pub doc_count: u64,
    pub doc_freq: Vec<u64>,
    /// Joint document frequency keyed by (i, j) with i < j.
    pub joint: BTreeMap<(usize, usize), u64>,
}

impl CooccurrenceStats {
    pub fn vocab_size(&self) -> usize {
        self.doc_freq.len()
    }

    pub fn joint_count(&self, i: usize, j: usize) -> u64 {
        if i == j {
            return self.doc_freq.get(i).copied().unwrap_or(0);
        }
        let key = if i < j { (i, j) } else { (j, i) };
        self.joint.get(&key).copied().unwrap_or(0)
    }
}

/// Counts each word and each unordered word pair at most once per document.
/// With `words` given, only pairs among those words are recorded.
pub fn build_cooccurrence(docs: &[BowVector], vocab_size: usize, words: Option<&BTreeSet<usize>>) -> CooccurrenceStats {
    let mut stats = CooccurrenceStats {
        doc_count: docs.len() as u64,
        doc_freq: vec![0; vocab_size],
        joint: BTreeMap::new(),
    };
    for doc in docs {
        let present: Vec<usize> = doc.entries.iter().map(|&(w, _)| w).filter(|&w| w < vocab_size).collect();
        for &w in &present {
            stats.doc_freq[w] += 1;
        }
        let tracked: Vec<usize> = match words {
            Some(set) => present.into_iter().filter(|w| set.contains(w)).collect(),
            None => present,
        };
        for (a, &i) in tracked.iter().enumerate() {
            for &j in &tracked[a + 1..] {
                *stats.joint.entry((i.min(j), i.max(j))).or_default() += 1;
            }
        }
    }
    stats
}

/// Normalized pointwise mutual information of two words over documents.
/// Pairs that never co-occur score −1; pairs that always appear together
/// score +1.
pub fn npmi(stats: &CooccurrenceStats, i: usize, j: usize) -> Result<f64, EvalError> {
    let v = stats.vocab_size();
    for w in [i, j] {
        if w >= v {
            return Err(EvalError::WordNotCovered { word: w, vocab: v });
        }
    }
    let joint = stats.joint_count(i, j);
    if joint == 0 {
        return Ok(-1.0);
    }
    let d = stats.doc_count as f64;
    let pij = joint as f64 / d;
    let pi = stats.doc_freq[i] as f64 / d;
    let pj = stats.doc_freq[j] as f64 / d;
    let denom = -pij.ln();
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok(((pij / (pi * pj)).ln() / denom).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coherence {
    pub mean: f64,
    pub per_topic: Vec<f64>,
}

/// Mean NPMI over all unordered pairs of each topic's word list, averaged
/// over topics.
pub fn topic_coherence(topics: &[Vec<usize>], stats: &CooccurrenceStats) -> Result<Coherence, EvalError> {
    let mut per_topic = Vec::with_capacity(topics.len());
    for words in topics {
        let n = words.len();
        if n < 2 {
            return Err(EvalError::TooFewWords(n));
        }
        let mut total = 0.0;
        for a in 0..n {
            for b in a + 1..n {
                total += npmi(stats, words[a], words[b])?;
            }
        }
        per_topic.push(total / (n * (n - 1) / 2) as f64);
    }
    let mean = if per_topic.is_empty() {
        0.0
    } else {
        per_topic.iter().sum::<f64>() / per_topic.len() as f64
    };
    Ok(Coherence { mean, per_topic })
}

/// Fraction of distinct words among all topics' word lists.
pub fn topic_diversity(topics: &[Vec<usize>]) -> f64 {
    let total: usize = topics.iter().map(Vec::len).sum();
    if total == 0 {
        return 0.0;
    }
    let unique: BTreeSet<usize> = topics.iter().flatten().copied().collect();
    unique.len() as f64 / total as f64
}

pub fn topic_quality(tc: f64, td: f64) -> f64 {
    tc * td
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(words: &[usize]) -> BowVector {
        BowVector::from_counts(words.iter().map(|&w| (w, 1)))
    }

    #[test]
    fn binary_counts() {
        let s = build_cooccurrence(&[doc(&[0, 1]), doc(&[0])], 2, None);
        assert_eq!(s.doc_freq, vec![2, 1]);
        assert_eq!(s.joint_count(0, 1), 1);
        let s = build_cooccurrence(&[BowVector::from_counts([(0, 2), (1, 1)])], 2, None);
        assert_eq!(s.joint_count(1, 0), 1);
    }

    #[test]
    fn npmi_boundaries() {
        let s = build_cooccurrence(&[doc(&[0, 1]), doc(&[2]), doc(&[0, 1]), doc(&[2])], 3, None);
        assert_eq!(npmi(&s, 0, 1).unwrap(), 1.0);
        assert_eq!(npmi(&s, 0, 2).unwrap(), -1.0);
        // P(0)=P(1)=1/2, P(0,1)=1/4
        let s = build_cooccurrence(&[doc(&[0, 1]), doc(&[0]), doc(&[1]), doc(&[2])], 3, None);
        assert!(npmi(&s, 0, 1).unwrap().abs() < 1e-15);
        assert!(npmi(&s, 0, 7).is_err());
    }

    #[test]
    fn diversity_and_quality() {
        assert_eq!(topic_diversity(&[vec![0, 1, 2], vec![0, 1, 2]]), 0.5);
        assert_eq!(topic_diversity(&[vec![0, 1, 2], vec![3, 4, 5]]), 1.0);
        assert!((topic_diversity(&[vec![0, 1, 2], vec![2, 3, 4]]) - 5.0 / 6.0).abs() < 1e-15);
        assert!((topic_quality(0.2033, 0.5677) - 0.1154).abs() < 5e-5);
        assert_eq!(topic_quality(0.0, 0.7), 0.0);
        assert_eq!(topic_quality(1.0, 1.0), 1.0);
    }
}
