use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use sbtm_core::corpus::{
    build_vocabulary, fit_poisson_length, read_corpus, read_token_list, stratified_split, time_slice, to_bow,
    write_vocabulary, BowVector, Document, Granularity, PoissonFit, SplitRatios, Vocabulary,
};
use serde::{Deserialize, Serialize};

use crate::config::{DocFreqScope, RunConfig, SplitName};
use crate::error::CliError;

pub const VOCAB_FILE: &str = "vocab.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub corpus: PathBuf,
    pub documents: usize,
    pub seed: u64,
    pub vocabulary: VocabularySummary,
    pub length_fit: PoissonFit,
    pub split: SplitManifest,
    pub slices: Option<SliceManifest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabularySummary {
    pub size: usize,
    pub hash: String,
    pub min_doc_freq: usize,
    pub doc_freq_scope: DocFreqScope,
    pub lowercase: bool,
}

/// Document indices are 0-based positions among the parsed documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub ratios: SplitRatios,
    pub max_length: Option<usize>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    /// Longer than `max_length`.
    pub excluded: Vec<usize>,
    /// No in-vocabulary tokens left; removed from their split.
    pub empty: Vec<usize>,
    pub bin_edges: Vec<f64>,
    pub strata: Vec<(usize, usize)>,
    pub stratum_counts: Vec<usize>,
    pub merged_bins: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceManifest {
    pub granularity: Granularity,
    pub count: usize,
    pub slices: Vec<SliceSummary>,
    /// 0-based slice of every document.
    pub doc_slice: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceSummary {
    pub index: usize,
    pub start: String,
    pub end: String,
    pub documents: usize,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn read_documents(path: &Path) -> Result<Vec<Document>, CliError> {
    read_corpus(path).map_err(|e| CliError::corpus(path, e))
}

pub fn prep(config: &RunConfig) -> Result<Manifest, CliError> {
    let docs = read_documents(&config.corpus)?;
    let lengths: Vec<usize> = docs.iter().map(|d| d.tokens.len()).collect();
    let length_fit = fit_poisson_length(&lengths).map_err(|e| CliError::Validation(e.to_string()))?;
    let split = stratified_split(&lengths, config.split, config.prep.max_length, config.model.seed)
        .map_err(|e| CliError::Validation(e.to_string()))?;

    let stopwords: Option<HashSet<String>> = match &config.stopwords {
        Some(p) => {
            let f = File::open(p).map_err(|e| CliError::io(p, e))?;
            Some(read_token_list(BufReader::new(f)).map_err(|e| CliError::corpus(p, e))?)
        }
        None => None,
    };
    let counted: Vec<Document> = match config.prep.doc_freq_scope {
        DocFreqScope::Train => split.train.iter().map(|&i| docs[i].clone()).collect(),
        DocFreqScope::Corpus => docs.clone(),
    };
    let vocab = build_vocabulary(
        &counted,
        config.prep.min_doc_freq,
        stopwords.as_ref(),
        config.prep.lowercase,
    )
    .map_err(|e| CliError::Validation(e.to_string()))?;

    let excluded: HashSet<usize> = split.excluded.iter().copied().collect();
    let empty: Vec<usize> = (0..docs.len())
        .filter(|i| !excluded.contains(i) && to_bow(&docs[*i], &vocab).is_err())
        .collect();
    let dropped: HashSet<usize> = empty.iter().copied().collect();
    let keep = |ids: &[usize]| -> Vec<usize> { ids.iter().copied().filter(|i| !dropped.contains(i)).collect() };

    let slices = if docs.first().is_some_and(|d| d.timestamp.is_some()) {
        let sliced =
            time_slice(&docs, &config.prep.granularity, &vocab).map_err(|e| CliError::Validation(e.to_string()))?;
        Some(SliceManifest {
            granularity: config.prep.granularity.clone(),
            count: sliced.num_slices(),
            slices: sliced
                .slices
                .iter()
                .map(|s| SliceSummary {
                    index: s.index,
                    start: s.start.to_string(),
                    end: s.end.to_string(),
                    documents: s.documents.len(),
                })
                .collect(),
            doc_slice: sliced.doc_slice,
        })
    } else {
        None
    };

    let manifest = Manifest {
        corpus: config.corpus.clone(),
        documents: docs.len(),
        seed: config.model.seed,
        vocabulary: VocabularySummary {
            size: vocab.len(),
            hash: vocab.hash_hex(),
            min_doc_freq: config.prep.min_doc_freq,
            doc_freq_scope: config.prep.doc_freq_scope,
            lowercase: config.prep.lowercase,
        },
        length_fit,
        split: SplitManifest {
            ratios: config.split,
            max_length: config.prep.max_length,
            train: keep(&split.train),
            validation: keep(&split.validation),
            test: keep(&split.test),
            excluded: split.excluded,
            empty,
            bin_edges: split.bin_edges,
            strata: split.strata,
            stratum_counts: split.stratum_counts,
            merged_bins: split.merged_bins,
        },
        slices,
    };

    fs::create_dir_all(&config.out).map_err(|e| CliError::io(&config.out, e))?;
    let vocab_path = config.out.join(VOCAB_FILE);
    let mut buf = Vec::new();
    write_vocabulary(&vocab, &mut buf).map_err(|e| CliError::corpus(&vocab_path, e))?;
    fs::write(&vocab_path, buf).map_err(|e| CliError::io(&vocab_path, e))?;
    write_json(&config.out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// The artifacts of `prep`, reloaded and checked against the corpus.
#[derive(Debug)]
pub struct Prepared {
    pub manifest: Manifest,
    pub vocab: Vocabulary,
    /// Bag of words per document; `None` when nothing is in the vocabulary.
    pub bows: Vec<Option<BowVector>>,
}

impl Prepared {
    pub fn load(config: &RunConfig) -> Result<Self, CliError> {
        let manifest_path = config.out.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path)
            .map_err(|e| CliError::io(&manifest_path, format!("{e} (run `sbtm prep` first)")))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| CliError::io(&manifest_path, e))?;
        if manifest.corpus != config.corpus {
            return Err(CliError::Validation(format!(
                "manifest was prepared from {}, config names {}",
                manifest.corpus.display(),
                config.corpus.display()
            )));
        }

        let vocab_path = config.out.join(VOCAB_FILE);
        let f = File::open(&vocab_path).map_err(|e| CliError::io(&vocab_path, e))?;
        let tokens: Vec<String> = BufReader::new(f)
            .lines()
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::io(&vocab_path, e))?;
        let n = tokens.len();
        let vocab = Vocabulary::from_tokens(tokens, vec![0; n], manifest.vocabulary.lowercase);
        if vocab.hash_hex() != manifest.vocabulary.hash {
            return Err(CliError::Validation(format!(
                "vocabulary hash mismatch: manifest {}, {} {}",
                manifest.vocabulary.hash,
                vocab_path.display(),
                vocab.hash_hex()
            )));
        }

        let docs = read_documents(&config.corpus)?;
        if docs.len() != manifest.documents {
            return Err(CliError::Validation(format!(
                "corpus has {} documents, manifest expects {}; rerun `sbtm prep`",
                docs.len(),
                manifest.documents
            )));
        }
        let bows = docs.iter().map(|d| to_bow(d, &vocab).ok()).collect();
        Ok(Self { manifest, vocab, bows })
    }

    pub fn indices(&self, split: SplitName) -> Vec<usize> {
        let s = &self.manifest.split;
        match split {
            SplitName::Train => s.train.clone(),
            SplitName::Validation => s.validation.clone(),
            SplitName::Test => s.test.clone(),
            SplitName::All => [s.train.as_slice(), &s.validation, &s.test].concat(),
        }
    }

    /// Bags of words of a split, with 0-based slice labels when the corpus
    /// is timestamped.
    pub fn documents(&self, split: SplitName) -> Result<(Vec<BowVector>, Option<Vec<usize>>), CliError> {
        let ids = self.indices(split);
        let docs = ids
            .iter()
            .map(|&i| {
                self.bows[i]
                    .clone()
                    .ok_or_else(|| CliError::Validation(format!("document {i} has no in-vocabulary tokens")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let slices = self
            .manifest
            .slices
            .as_ref()
            .map(|m| ids.iter().map(|&i| m.doc_slice[i]).collect());
        Ok((docs, slices))
    }

    /// Normalized word frequencies per slice over the training documents.
    pub fn slice_frequencies(&self) -> Option<Vec<Vec<f64>>> {
        let m = self.manifest.slices.as_ref()?;
        let v = self.vocab.len();
        let mut freq = vec![vec![0.0; v]; m.count];
        for &i in &self.manifest.split.train {
            if let Some(bow) = &self.bows[i] {
                for &(w, c) in &bow.entries {
                    freq[m.doc_slice[i]][w] += c as f64;
                }
            }
        }
        for row in &mut freq {
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter_mut().for_each(|x| *x /= total);
            }
        }
        Some(freq)
    }

    pub fn num_slices(&self) -> usize {
        self.manifest.slices.as_ref().map_or(1, |m| m.count)
    }
}
