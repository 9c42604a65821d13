//! Pre-tokenized documents, vocabularies, bag-of-words views, length statistics,
//! stratified splitting and time slicing.

mod io;
mod slices;
mod split;
mod stats;

use std::collections::{BTreeMap, HashMap, HashSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use io::{parse_corpus, read_corpus, read_token_list, write_vocabulary};
pub use slices::{time_slice, Granularity, TimeSlice, TimeSlicedCorpus};
pub use split::{doane_bin_count, stratified_split, CorpusSplit, SplitRatios};
pub use stats::{fit_poisson_length, poisson_cdf, PoissonFit};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("vocabulary is empty after filtering (min_doc_freq = {min_doc_freq})")]
    EmptyVocabulary { min_doc_freq: usize },
    #[error("min_doc_freq must be at least 1")]
    InvalidMinDocFreq,
    #[error("document has no in-vocabulary tokens")]
    EmptyDocument,
    #[error("bag of words has zero length")]
    ZeroLength,
    #[error("need at least {needed} documents, got {got}")]
    TooFewDocuments { needed: usize, got: usize },
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    InvalidRatios([f64; 3]),
    #[error("documents without timestamps: {0:?}")]
    MissingTimestamps(Vec<usize>),
    #[error("document {doc} dated {date} lies outside the slice edges")]
    OutsideSlices { doc: usize, date: NaiveDate },
    #[error("custom slice edges must be strictly increasing and at least two")]
    InvalidEdges,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("corpus mixes timestamped and untimestamped documents")]
    MixedTimestamps,
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CorpusError {
    fn from(e: std::io::Error) -> Self {
        CorpusError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub tokens: Vec<String>,
    pub timestamp: Option<NaiveDate>,
    pub source_id: Option<String>,
}

impl Document {
    pub fn new<S: AsRef<str>>(tokens: &[S]) -> Self {
        Self {
            tokens: tokens.iter().map(|t| t.as_ref().to_string()).collect(),
            timestamp: None,
            source_id: None,
        }
    }

    pub fn with_timestamp(mut self, date: NaiveDate) -> Self {
        self.timestamp = Some(date);
        self
    }
}

/// Token ↔ index bijection, ordered by descending document frequency then
/// lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    index_to_token: Vec<String>,
    doc_freq: Vec<usize>,
    lowercase: bool,
    token_to_index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from an explicit token list (index order).
    pub fn from_tokens(tokens: Vec<String>, doc_freq: Vec<usize>, lowercase: bool) -> Self {
        let token_to_index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            index_to_token: tokens,
            doc_freq,
            lowercase,
            token_to_index,
        }
    }

    pub fn len(&self) -> usize {
        self.index_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_to_token.is_empty()
    }

    pub fn index(&self, token: &str) -> Option<usize> {
        if self.lowercase {
            self.token_to_index.get(&token.to_lowercase()).copied()
        } else {
            self.token_to_index.get(token).copied()
        }
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.index_to_token.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.index_to_token
    }

    pub fn doc_freq(&self) -> &[usize] {
        &self.doc_freq
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    /// SHA-256 over the tokens in index order, newline-terminated.
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for t in &self.index_to_token {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        h.finalize().into()
    }

    pub fn hash_hex(&self) -> String {
        self.hash().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Counts document frequencies and keeps tokens seen in at least
/// `min_doc_freq` documents that are not stopwords.
pub fn build_vocabulary(
    docs: &[Document],
    min_doc_freq: usize,
    stopwords: Option<&HashSet<String>>,
    lowercase: bool,
) -> Result<Vocabulary, CorpusError> {
    if min_doc_freq < 1 {
        return Err(CorpusError::InvalidMinDocFreq);
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in docs {
        let unique: HashSet<String> = doc
            .tokens
            .iter()
            .map(|t| if lowercase { t.to_lowercase() } else { t.clone() })
            .collect();
        for t in unique {
            *df.entry(t).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = df
        .into_iter()
        .filter(|(t, c)| *c >= min_doc_freq && !stopwords.is_some_and(|s| s.contains(t)))
        .collect();
    if kept.is_empty() {
        return Err(CorpusError::EmptyVocabulary { min_doc_freq });
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let (tokens, freqs) = kept.into_iter().unzip();
    Ok(Vocabulary::from_tokens(tokens, freqs, lowercase))
}

/// Sparse token counts with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BowVector {
    pub entries: Vec<(usize, u32)>,
    pub length: u32,
}

impl BowVector {
    /// Builds from arbitrary (index, count) pairs, merging duplicates and
    /// dropping zero counts.
    pub fn from_counts(counts: impl IntoIterator<Item = (usize, u32)>) -> Self {
        let mut map: BTreeMap<usize, u32> = BTreeMap::new();
        for (i, c) in counts {
            if c > 0 {
                *map.entry(i).or_default() += c;
            }
        }
        let length = map.values().sum();
        Self {
            entries: map.into_iter().collect(),
            length,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.length == 0
    }

    pub fn dense_counts(&self, vocab_size: usize) -> Vec<f64> {
        let mut out = vec![0.0; vocab_size];
        for &(i, c) in &self.entries {
            out[i] = c as f64;
        }
        out
    }
}

/// Counts in-vocabulary tokens; out-of-vocabulary tokens are dropped.
pub fn to_bow(doc: &Document, vocab: &Vocabulary) -> Result<BowVector, CorpusError> {
    let bow = BowVector::from_counts(doc.tokens.iter().filter_map(|t| vocab.index(t)).map(|i| (i, 1)));
    if bow.is_empty() {
        Err(CorpusError::EmptyDocument)
    } else {
        Ok(bow)
    }
}

/// Dense probability vector over the vocabulary.
pub fn normalize_bow(bow: &BowVector, vocab_size: usize) -> Result<Vec<f64>, CorpusError> {
    if bow.length == 0 {
        return Err(CorpusError::ZeroLength);
    }
    let n = bow.length as f64;
    let mut out = vec![0.0; vocab_size];
    for &(i, c) in &bow.entries {
        out[i] = c as f64 / n;
    }
    Ok(out)
}
