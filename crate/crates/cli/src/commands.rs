use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use sbtm_core::corpus::{BowVector, Vocabulary};
use sbtm_core::evaluation::{
    build_cooccurrence, perplexity, topic_coherence, topic_diversity, Coherence, DocumentScorer, EvalError, EvalReport,
};
use sbtm_core::models::{
    effective_topics, fit, load_checkpoint, load_word_embeddings, nearest_neighbors, save_checkpoint, topic_words,
    Batch, FitReport, NeighborKind, NoiseSource, Sampling, TopicModel, TrainData,
};
use serde::Serialize;

use crate::config::{NeighborTarget, RunConfig, SplitName, TopicSet};
use crate::data::{write_json, Prepared};
use crate::error::CliError;

pub const CHECKPOINT_FILE: &str = "model.sbtm";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const FIT_FILE: &str = "fit.json";
pub const EVAL_FILE: &str = "eval.json";
pub const TOPICS_FILE: &str = "topics.tsv";
pub const NEIGHBORS_FILE: &str = "neighbors.tsv";
pub const TRAJECTORIES_FILE: &str = "trajectories.csv";

#[derive(Serialize)]
struct FitSummary {
    epochs: usize,
    best_epoch: Option<usize>,
    best_perplexity: Option<f64>,
    stopped_early: bool,
    vocabulary_hash: String,
}

pub fn train(config: &RunConfig) -> Result<FitReport, CliError> {
    let prepared = Prepared::load(config)?;
    let kind = config.model.kind;
    if kind.is_dynamic() && prepared.manifest.slices.is_none() {
        return Err(CliError::Config(format!(
            "model kind {} needs a timestamped corpus, {} has no timestamps",
            kind.name(),
            config.corpus.display()
        )));
    }
    let (train, train_slices) = prepared.documents(SplitName::Train)?;
    if train.is_empty() {
        return Err(CliError::Validation("training split is empty".into()));
    }
    let (validation, validation_slices) = prepared.documents(SplitName::Validation)?;
    let dynamic = kind.is_dynamic();
    let data = TrainData {
        train,
        train_slices: train_slices.filter(|_| dynamic),
        validation,
        validation_slices: validation_slices.filter(|_| dynamic),
    };

    let mut model = TopicModel::new(config.model.clone(), prepared.vocab.len(), prepared.num_slices())?;
    if dynamic {
        if let Some(freq) = prepared.slice_frequencies() {
            model.set_slice_frequencies(&freq)?;
        }
    }
    if let Some(path) = &config.embeddings {
        let f = File::open(path).map_err(|e| CliError::io(path, e))?;
        load_word_embeddings(&mut model, &prepared.vocab, BufReader::new(f))?;
    }

    let report = fit(&mut model, &data)?;

    let metrics_path = config.out.join(METRICS_FILE);
    let mut lines = String::new();
    for m in &report.epochs {
        lines.push_str(&serde_json::to_string(m).map_err(|e| CliError::io(&metrics_path, e))?);
        lines.push('\n');
    }
    fs::write(&metrics_path, lines).map_err(|e| CliError::io(&metrics_path, e))?;
    let ckpt = config.out.join(CHECKPOINT_FILE);
    save_checkpoint(&ckpt, &model, &prepared.vocab.hash()).map_err(|e| CliError::checkpoint(&ckpt, e))?;
    write_json(
        &config.out.join(FIT_FILE),
        &FitSummary {
            epochs: report.epochs.len(),
            best_epoch: report.best_epoch,
            best_perplexity: report.best_perplexity,
            stopped_early: report.stopped_early,
            vocabulary_hash: prepared.vocab.hash_hex(),
        },
    )?;
    Ok(report)
}

/// Loads the trained model and refuses it unless it was trained on the
/// prepared vocabulary.
fn load_model(config: &RunConfig) -> Result<(Prepared, TopicModel), CliError> {
    let prepared = Prepared::load(config)?;
    let path = config.out.join(CHECKPOINT_FILE);
    let ckpt = load_checkpoint(&path).map_err(|e| CliError::checkpoint(&path, e))?;
    ckpt.check_vocabulary(&prepared.vocab.hash())
        .map_err(|e| CliError::checkpoint(&path, e))?;
    if ckpt.model.vocab_size != prepared.vocab.len() {
        return Err(CliError::Validation(format!(
            "checkpoint has V = {}, vocabulary has {}",
            ckpt.model.vocab_size,
            prepared.vocab.len()
        )));
    }
    if ckpt.model.kind().is_dynamic() && ckpt.model.num_slices != prepared.num_slices() {
        return Err(CliError::Validation(format!(
            "checkpoint has {} slices, manifest has {}",
            ckpt.model.num_slices,
            prepared.num_slices()
        )));
    }
    Ok((prepared, ckpt.model))
}

/// Slices whose topics are reported: every slice of a dynamic model, a
/// single `None` otherwise.
fn slices_of(model: &TopicModel) -> Vec<Option<usize>> {
    if model.kind().is_dynamic() {
        (0..model.num_slices).map(Some).collect()
    } else {
        vec![None]
    }
}

/// Indices of the `n` most probable words (ties broken by index).
fn top_words(row: &[f64], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    order.truncate(n);
    order
}

/// Scores each document with one posterior sample. The noise is seeded
/// afresh for every call, so results depend on the seed and the thread
/// count only.
struct SampledScorer<'a> {
    model: &'a TopicModel,
    seed: u64,
}

impl DocumentScorer for SampledScorer<'_> {
    fn score(&self, docs: &[BowVector], slices: Option<&[usize]>) -> Result<(f64, u64), EvalError> {
        let mut noise = NoiseSource::new(self.seed);
        let chunk = self.model.config.batch_size.max(1);
        let mut total = 0.0;
        let mut tokens = 0;
        for start in (0..docs.len()).step_by(chunk) {
            let end = (start + chunk).min(docs.len());
            let batch = Batch {
                docs: docs[start..end].to_vec(),
                slices: slices.map(|s| s[start..end].to_vec()),
                corpus_size: docs.len(),
            };
            let out = self
                .model
                .forward(&batch, &mut Sampling::Stochastic(&mut noise), false, 1.0)?;
            total += out.breakdown.local_total();
            tokens += batch.token_count();
        }
        Ok((total, tokens))
    }
}

fn eval_threads() -> Result<usize, CliError> {
    match std::env::var("SBTM_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Config(format!("SBTM_THREADS must be a positive integer, got `{v}`"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

#[derive(Serialize)]
pub struct EvalOutput {
    #[serde(flatten)]
    pub report: EvalReport,
    /// Topics whose top words entered coherence and diversity.
    pub topics: Vec<usize>,
    pub split: SplitName,
    pub reference: SplitName,
    pub documents: usize,
    pub perplexity_mode: &'static str,
}

pub fn eval(config: &RunConfig) -> Result<EvalOutput, CliError> {
    let (prepared, model) = load_model(config)?;
    let opts = &config.eval;
    let (docs, slices) = prepared.documents(opts.split)?;
    if docs.is_empty() {
        return Err(CliError::Validation(format!("{:?} split has no documents", opts.split).to_lowercase()));
    }
    let slices = slices.filter(|_| model.kind().is_dynamic());
    let threads = eval_threads()?;
    let ppl = if opts.sampled {
        let scorer = SampledScorer {
            model: &model,
            seed: model.config.seed,
        };
        perplexity(&scorer, &docs, slices.as_deref(), threads)?
    } else {
        perplexity(&model, &docs, slices.as_deref(), threads)?
    };

    let batch = Batch {
        docs: docs.clone(),
        slices: slices.clone(),
        corpus_size: docs.len(),
    };
    let effective = effective_topics(&model, &batch, opts.threshold)?;
    let topics: Vec<usize> = match opts.topics {
        TopicSet::Effective => effective.clone(),
        TopicSet::All => (0..model.num_topics()).collect(),
    };
    if topics.is_empty() {
        return Err(CliError::Validation("no topics reach the effective threshold".into()));
    }

    let mut coherence_lists = Vec::new();
    let mut diversity_lists = Vec::new();
    for slice in slices_of(&model) {
        let matrix = model.topic_word_matrix(slice)?;
        coherence_lists.push(topics.iter().map(|&k| top_words(&matrix[k], opts.coherence_words)).collect::<Vec<_>>());
        diversity_lists.push(topics.iter().map(|&k| top_words(&matrix[k], opts.diversity_words)).collect::<Vec<_>>());
    }
    let words: BTreeSet<usize> = coherence_lists.iter().flatten().flatten().copied().collect();
    let (reference, _) = prepared.documents(opts.reference)?;
    let stats = build_cooccurrence(&reference, prepared.vocab.len(), Some(&words));

    let per_slice = coherence_lists
        .iter()
        .map(|lists| topic_coherence(lists, &stats))
        .collect::<Result<Vec<Coherence>, _>>()?;
    let n = per_slice.len() as f64;
    let coherence = Coherence {
        mean: per_slice.iter().map(|c| c.mean).sum::<f64>() / n,
        per_topic: (0..topics.len())
            .map(|i| per_slice.iter().map(|c| c.per_topic[i]).sum::<f64>() / n)
            .collect(),
    };
    let td = diversity_lists.iter().map(|l| topic_diversity(l)).sum::<f64>() / n;

    let output = EvalOutput {
        report: EvalReport::new(ppl, &coherence, td, effective.len(), model.num_topics()),
        topics,
        split: opts.split,
        reference: opts.reference,
        documents: docs.len(),
        perplexity_mode: if opts.sampled {
            "full_document_sampled"
        } else {
            "full_document_mean"
        },
    };
    write_json(&config.out.join(EVAL_FILE), &output)?;
    Ok(output)
}

fn csv_writer(path: &Path, delimiter: u8) -> Result<csv::Writer<File>, CliError> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::WriterBuilder::new().delimiter(delimiter).from_writer(f))
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::io(path, e)
}

/// One row of the topics table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopicWord {
    pub topic: usize,
    /// 1-based; always 1 for static models.
    pub slice: usize,
    pub rank: usize,
    pub word: String,
    pub probability: f64,
}

pub fn topics(config: &RunConfig) -> Result<Vec<TopicWord>, CliError> {
    let (prepared, model) = load_model(config)?;
    let mut rows = Vec::new();
    for slice in slices_of(&model) {
        for k in 0..model.num_topics() {
            for (rank, (word, probability)) in topic_words(&model, &prepared.vocab, k, slice, config.topics.words)?
                .into_iter()
                .enumerate()
            {
                rows.push(TopicWord {
                    topic: k,
                    slice: slice.map_or(1, |s| s + 1),
                    rank: rank + 1,
                    word,
                    probability,
                });
            }
        }
    }
    let path = config.out.join(TOPICS_FILE);
    let mut w = csv_writer(&path, b'\t')?;
    for r in &rows {
        w.serialize(r).map_err(csv_error(&path))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeighborRow {
    pub query: String,
    pub rank: usize,
    pub neighbor: String,
    pub similarity: f64,
}

pub fn neighbors(config: &RunConfig) -> Result<Vec<NeighborRow>, CliError> {
    let opts = &config.neighbors;
    if opts.queries.is_empty() {
        return Err(CliError::Config("neighbors.queries is empty".into()));
    }
    let (prepared, model) = load_model(config)?;
    let kind = match opts.kind {
        NeighborTarget::Word => NeighborKind::Word,
        NeighborTarget::Topic => NeighborKind::Topic,
    };
    let mut rows = Vec::new();
    for q in &opts.queries {
        for (rank, n) in nearest_neighbors(&model, &prepared.vocab, q, opts.count, kind)?
            .into_iter()
            .enumerate()
        {
            rows.push(NeighborRow {
                query: q.clone(),
                rank: rank + 1,
                neighbor: n.label,
                similarity: n.similarity,
            });
        }
    }
    let path = config.out.join(NEIGHBORS_FILE);
    let mut w = csv_writer(&path, b'\t')?;
    for r in &rows {
        w.serialize(r).map_err(csv_error(&path))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub topic: usize,
    pub word: String,
    /// 1-based.
    pub slice: usize,
    pub probability: f64,
}

fn word_index(vocab: &Vocabulary, w: &str) -> Result<usize, CliError> {
    vocab
        .index(w)
        .ok_or_else(|| CliError::Validation(format!("word `{w}` is not in the vocabulary")))
}

pub fn trajectories(config: &RunConfig) -> Result<Vec<TrajectoryPoint>, CliError> {
    let (prepared, model) = load_model(config)?;
    let vocab = &prepared.vocab;
    let matrices = slices_of(&model)
        .into_iter()
        .map(|s| model.topic_word_matrix(s))
        .collect::<Result<Vec<_>, _>>()?;
    let requested = match &config.trajectories.words {
        Some(words) => Some(words.iter().map(|w| word_index(vocab, w)).collect::<Result<Vec<_>, _>>()?),
        None => None,
    };

    let mut rows = Vec::new();
    for k in 0..model.num_topics() {
        let words = match &requested {
            Some(w) => w.clone(),
            None => {
                let mut seen = BTreeSet::new();
                let mut order = Vec::new();
                for m in &matrices {
                    for w in top_words(&m[k], config.trajectories.top) {
                        if seen.insert(w) {
                            order.push(w);
                        }
                    }
                }
                order
            }
        };
        for &w in &words {
            for (t, m) in matrices.iter().enumerate() {
                rows.push(TrajectoryPoint {
                    topic: k,
                    word: vocab.token(w).unwrap_or_default().to_string(),
                    slice: t + 1,
                    probability: m[k][w],
                });
            }
        }
    }
    let path = config.out.join(TRAJECTORIES_FILE);
    let mut w = csv_writer(&path, b',')?;
    for r in &rows {
        w.serialize(r).map_err(csv_error(&path))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(rows)
}

pub fn checkpoint_path(config: &RunConfig) -> PathBuf {
    config.out.join(CHECKPOINT_FILE)
}

pub fn print_lines(lines: impl IntoIterator<Item = String>) -> Result<(), CliError> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for l in lines {
        writeln!(out, "{l}").map_err(|e| CliError::io(Path::new("<stdout>"), e))?;
    }
    Ok(())
}
