//! Perplexity, NPMI coherence, topic diversity and topic quality.

mod metrics;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::BowVector;
use crate::models::{ModelError, TopicModel};

pub use metrics::{
    build_cooccurrence, npmi, topic_coherence, topic_diversity, topic_quality, CooccurrenceStats, Coherence,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no tokens to score")]
    NoTokens,
    #[error("topics need at least two words each, got {0}")]
    TooFewWords(usize),
    #[error("word {word} is not covered by the co-occurrence statistics (V = {vocab})")]
    WordNotCovered { word: usize, vocab: usize },
    #[error("{what}: expected {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Anything that assigns a log-likelihood surrogate to documents.
pub trait DocumentScorer: Sync {
    /// Summed log-likelihood surrogate of `docs` and their token count.
    fn score(&self, docs: &[BowVector], slices: Option<&[usize]>) -> Result<(f64, u64), EvalError>;
}

impl DocumentScorer for TopicModel {
    fn score(&self, docs: &[BowVector], slices: Option<&[usize]>) -> Result<(f64, u64), EvalError> {
        Ok(self.elbo_score(docs, slices)?)
    }
}

/// Fixed per-document topic proportions over fixed topics; p(w | d) =
/// Σ_k θ_dk β_kw. A single row in `theta` is shared by every document.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureOracle {
    pub theta: Vec<Vec<f64>>,
    pub topics: Vec<Vec<f64>>,
}

impl MixtureOracle {
    /// Every word gets probability 1/V.
    pub fn uniform(vocab: usize) -> Self {
        Self {
            theta: vec![vec![1.0]],
            topics: vec![vec![1.0 / vocab as f64; vocab]],
        }
    }
}

impl DocumentScorer for MixtureOracle {
    fn score(&self, docs: &[BowVector], _slices: Option<&[usize]>) -> Result<(f64, u64), EvalError> {
        if self.theta.len() != 1 && self.theta.len() != docs.len() {
            return Err(EvalError::LengthMismatch {
                what: "document proportions",
                expected: docs.len(),
                found: self.theta.len(),
            });
        }
        let mut total = 0.0;
        let mut tokens = 0u64;
        for (d, doc) in docs.iter().enumerate() {
            let theta = &self.theta[if self.theta.len() == 1 { 0 } else { d }];
            for &(w, c) in &doc.entries {
                let p: f64 = theta.iter().zip(&self.topics).map(|(t, row)| t * row[w]).sum();
                total += c as f64 * p.ln();
            }
            tokens += doc.length as u64;
        }
        Ok((total, tokens))
    }
}

/// exp(−L/N) over `docs`, scoring up to `threads` contiguous chunks in
/// parallel. Chunk results are summed in order, so the value does not
/// depend on the thread count beyond floating-point summation grouping,
/// which is fixed by `threads`.
pub fn perplexity<S: DocumentScorer + ?Sized>(
    scorer: &S,
    docs: &[BowVector],
    slices: Option<&[usize]>,
    threads: usize,
) -> Result<f64, EvalError> {
    if let Some(s) = slices {
        if s.len() != docs.len() {
            return Err(EvalError::LengthMismatch {
                what: "slice labels",
                expected: docs.len(),
                found: s.len(),
            });
        }
    }
    let threads = threads.clamp(1, docs.len().max(1));
    let chunk = docs.len().div_ceil(threads).max(1);
    let results: Vec<Result<(f64, u64), EvalError>> = if threads == 1 {
        vec![scorer.score(docs, slices)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = docs
                .chunks(chunk)
                .enumerate()
                .map(|(i, part)| {
                    let sl = slices.map(|s| &s[i * chunk..i * chunk + part.len()]);
                    scope.spawn(move || scorer.score(part, sl))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("scoring thread panicked")).collect()
        })
    };
    let mut total = 0.0;
    let mut tokens = 0;
    for r in results {
        let (l, n) = r?;
        total += l;
        tokens += n;
    }
    if tokens == 0 {
        return Err(EvalError::NoTokens);
    }
    Ok((-total / tokens as f64).exp())
}

/// Summary written by `sbtm eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub perplexity: f64,
    pub tc: f64,
    pub td: f64,
    pub tq: f64,
    pub detected_topics: usize,
    pub capacity: usize,
    pub topic_npmi: Vec<f64>,
}

impl EvalReport {
    pub fn new(perplexity: f64, coherence: &Coherence, td: f64, detected_topics: usize, capacity: usize) -> Self {
        Self {
            perplexity,
            tc: coherence.mean,
            td,
            tq: topic_quality(coherence.mean, td),
            detected_topics,
            capacity,
            topic_npmi: coherence.per_topic.clone(),
        }
    }
}
