use std::io::BufRead;

use super::forward::Batch;
use super::noise::Sampling;
use super::{ModelError, ModelKind, TopicModel};
use crate::autodiff::{Graph, Tensor};
use crate::corpus::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeighborKind {
    /// Other words, by cosine similarity of ρ columns.
    Word,
    /// Topics, by cosine similarity between the word and the topic embeddings.
    Topic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub label: String,
    pub similarity: f64,
}

impl TopicModel {
    /// Topic-word distributions (K rows over V). `slice` is 0-based and
    /// required for dynamic models, where the variational means of the
    /// topic embeddings are used.
    pub fn topic_word_matrix(&self, slice: Option<usize>) -> Result<Vec<Vec<f64>>, ModelError> {
        let k = self.config.num_topics;
        let mut g = Graph::new();
        let words = match (self.config.kind, slice) {
            (ModelKind::SbVae, _) => {
                let dec = self.layout.decoder.as_ref().expect("dense decoder");
                let mut eye = vec![0.0; k * k];
                for i in 0..k {
                    eye[i * k + i] = 1.0;
                }
                let x = g.constant(Tensor::matrix(k, k, eye)?);
                let logits = dec.forward(&mut g, &self.store, x)?;
                g.softmax(logits)
            }
            (kind, None) if !kind.is_dynamic() => {
                let alpha = g.param(&self.store, self.layout.alpha.expect("static embeddings"));
                self.topic_words_node(&mut g, alpha)?
            }
            (kind, Some(t)) if kind.is_dynamic() => {
                if t >= self.num_slices {
                    return Err(ModelError::SliceOutOfRange {
                        doc: 0,
                        slice: t + 1,
                        slices: self.num_slices,
                    });
                }
                let dl = self.layout.dynamic.as_ref().expect("dynamic layout");
                let mu = g.param(&self.store, dl.alpha_mu);
                let rows: Vec<usize> = (t * k..(t + 1) * k).collect();
                let a_t = g.gather_rows(mu, &rows)?;
                self.topic_words_node(&mut g, a_t)?
            }
            (kind, _) => {
                return Err(ModelError::Config(format!(
                    "a time slice must be given for dynamic models and only for them ({})",
                    kind.name()
                )))
            }
        };
        let t = g.value(words);
        Ok((0..k).map(|r| t.row(r).to_vec()).collect())
    }

    /// Mean-mode topic proportions for each document (B × K).
    pub fn document_topics(&self, batch: &Batch) -> Result<Tensor, ModelError> {
        let chunk = self.config.batch_size.max(1);
        let k = self.config.num_topics;
        let mut data = Vec::with_capacity(batch.len() * k);
        for start in (0..batch.len()).step_by(chunk) {
            let end = (start + chunk).min(batch.len());
            let part = Batch {
                docs: batch.docs[start..end].to_vec(),
                slices: batch.slices.as_ref().map(|s| s[start..end].to_vec()),
                corpus_size: batch.corpus_size,
            };
            let out = self.forward(&part, &mut Sampling::Mean, false, 1.0)?;
            data.extend_from_slice(out.mixture.data());
        }
        Ok(Tensor::matrix(batch.len(), k, data)?)
    }
}

/// Topics whose corpus-mean proportion is at least `threshold`.
pub fn effective_topics(model: &TopicModel, batch: &Batch, threshold: f64) -> Result<Vec<usize>, ModelError> {
    let mix = model.document_topics(batch)?;
    Ok(active_topics(&mix, threshold))
}

pub(crate) fn active_topics(mix: &Tensor, threshold: f64) -> Vec<usize> {
    let rows = mix.rows().max(1) as f64;
    (0..mix.cols())
        .filter(|&k| (0..mix.rows()).map(|r| mix.at(r, k)).sum::<f64>() / rows >= threshold)
        .collect()
}

/// Topic-word matrix, as [`TopicModel::topic_word_matrix`].
pub fn topic_word_matrix(model: &TopicModel, slice: Option<usize>) -> Result<Vec<Vec<f64>>, ModelError> {
    model.topic_word_matrix(slice)
}

/// The `n` most probable words of topic `k` (ties broken by index).
pub fn topic_words(
    model: &TopicModel,
    vocab: &Vocabulary,
    k: usize,
    slice: Option<usize>,
    n: usize,
) -> Result<Vec<(String, f64)>, ModelError> {
    let kk = model.num_topics();
    if k >= kk {
        return Err(ModelError::TopicOutOfRange { topic: k, k: kk });
    }
    let matrix = model.topic_word_matrix(slice)?;
    Ok(rank_words(&matrix[k], n)
        .into_iter()
        .map(|(w, p)| (word_label(vocab, w), p))
        .collect())
}

pub(crate) fn rank_words(row: &[f64], n: usize) -> Vec<(usize, f64)> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    order.into_iter().take(n).map(|w| (w, row[w])).collect()
}

fn word_label(vocab: &Vocabulary, w: usize) -> String {
    vocab.token(w).map_or_else(|| format!("#{w}"), str::to_string)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn word_column(rho: &Tensor, w: usize) -> Vec<f64> {
    (0..rho.rows()).map(|l| rho.at(l, w)).collect()
}

/// Words or topics closest to `query` by cosine similarity. Topic
/// embeddings of dynamic models are taken from the last slice.
pub fn nearest_neighbors(
    model: &TopicModel,
    vocab: &Vocabulary,
    query: &str,
    n: usize,
    kind: NeighborKind,
) -> Result<Vec<Neighbor>, ModelError> {
    let rho_id = model
        .layout
        .rho
        .ok_or_else(|| ModelError::Unsupported(format!("{} has no word embeddings", model.kind().name())))?;
    let q = vocab.index(query).ok_or_else(|| ModelError::UnknownWord(query.to_string()))?;
    let rho = model.store.value(rho_id);
    let qv = word_column(rho, q);
    let mut out: Vec<Neighbor> = match kind {
        NeighborKind::Word => (0..rho.cols())
            .filter(|&w| w != q)
            .map(|w| Neighbor {
                index: w,
                label: word_label(vocab, w),
                similarity: cosine(&qv, &word_column(rho, w)),
            })
            .collect(),
        NeighborKind::Topic => {
            let k = model.num_topics();
            let (table, offset) = match (&model.layout.alpha, &model.layout.dynamic) {
                (Some(a), _) => (model.store.value(*a), 0),
                (None, Some(dl)) => (model.store.value(dl.alpha_mu), (model.num_slices - 1) * k),
                _ => unreachable!("embedding models carry topic embeddings"),
            };
            (0..k)
                .map(|t| Neighbor {
                    index: t,
                    label: format!("topic {t}"),
                    similarity: cosine(&qv, table.row(offset + t)),
                })
                .collect()
        }
    };
    out.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.index.cmp(&b.index)));
    out.truncate(n);
    Ok(out)
}

/// Overwrites ρ columns with vectors from a `token v1 … vL` text file.
/// Tokens absent from the file keep their initialization. Returns the
/// number of vocabulary words that were found.
pub fn load_word_embeddings<R: BufRead>(
    model: &mut TopicModel,
    vocab: &Vocabulary,
    reader: R,
) -> Result<usize, ModelError> {
    let rho_id = model
        .layout
        .rho
        .ok_or_else(|| ModelError::Unsupported(format!("{} has no word embeddings", model.kind().name())))?;
    let l = model.config.embedding_dim;
    let v = model.vocab_size;
    let mut seen = vec![false; v];
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values: Vec<f64> = parts
            .map(|p| p.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| ModelError::Config(format!("embedding line {}: {e}", n + 1)))?;
        if values.len() != l {
            return Err(ModelError::Config(format!(
                "embedding line {}: expected {l} values, found {}",
                n + 1,
                values.len()
            )));
        }
        if let Some(w) = vocab.index(token) {
            if w < v {
                let rho = model.store.value_mut(rho_id);
                for (i, x) in values.into_iter().enumerate() {
                    rho.data_mut()[i * v + w] = x;
                }
                seen[w] = true;
            }
        }
    }
    Ok(seen.into_iter().filter(|&s| s).count())
}
