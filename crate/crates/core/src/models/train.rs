use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::Batch;
use super::inspect::active_topics;
use super::noise::{GammaDraw, NoiseSource, Sampling};
use super::{ModelError, TopicModel};
use crate::autodiff::{clip_gradients, kl_anneal_weight, Adam, Tensor};
use crate::corpus::BowVector;

/// Default threshold on corpus-mean topic proportion for counting a topic
/// as in use.
pub const EFFECTIVE_TOPIC_THRESHOLD: f64 = 0.01;

/// Training and validation documents, with 0-based slice labels for
/// dynamic models.
#[derive(Debug, Clone, Default)]
pub struct TrainData {
    pub train: Vec<BowVector>,
    pub train_slices: Option<Vec<usize>>,
    pub validation: Vec<BowVector>,
    pub validation_slices: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-document ELBO over the epoch's minibatches.
    pub elbo: f64,
    pub reconstruction: f64,
    /// Mean per-document value of every subtracted term.
    pub kl: BTreeMap<String, f64>,
    pub kl_weight: f64,
    pub val_perplexity: Option<f64>,
    pub effective_topics: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub epochs: Vec<EpochMetrics>,
    /// Epoch whose parameters were kept (best validation perplexity).
    pub best_epoch: Option<usize>,
    pub best_perplexity: Option<f64>,
    pub stopped_early: bool,
}

impl TopicModel {
    /// Per-document ELBO surrogate summed over `docs`, together with their
    /// token count. Latent variables sit at their variational means.
    pub fn elbo_score(&self, docs: &[BowVector], slices: Option<&[usize]>) -> Result<(f64, u64), ModelError> {
        let chunk = self.config.batch_size.max(1);
        let mut total = 0.0;
        let mut tokens = 0;
        for start in (0..docs.len()).step_by(chunk) {
            let end = (start + chunk).min(docs.len());
            let batch = Batch {
                docs: docs[start..end].to_vec(),
                slices: slices.map(|s| s[start..end].to_vec()),
                corpus_size: docs.len(),
            };
            let out = self.forward(&batch, &mut Sampling::Mean, false, 1.0)?;
            total += out.breakdown.local_total();
            tokens += batch.token_count();
        }
        Ok((total, tokens))
    }

    /// exp(−L/N) with L from [`TopicModel::elbo_score`].
    pub fn perplexity(&self, docs: &[BowVector], slices: Option<&[usize]>) -> Result<f64, ModelError> {
        let (score, tokens) = self.elbo_score(docs, slices)?;
        if tokens == 0 {
            return Err(ModelError::EmptyBatch);
        }
        Ok((-score / tokens as f64).exp())
    }
}

fn check_slices(model: &TopicModel, docs: usize, slices: Option<&Vec<usize>>) -> Result<(), ModelError> {
    match (model.config.kind.is_dynamic(), slices) {
        (true, None) => Err(ModelError::Config(format!(
            "{} needs a time-sliced corpus",
            model.config.kind.name()
        ))),
        (true, Some(s)) if s.len() != docs => Err(ModelError::Config(format!(
            "{} slice labels for {docs} documents",
            s.len()
        ))),
        _ => Ok(()),
    }
}

fn minibatches(order: &[usize], size: usize, min_rows: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < min_rows) {
        let tail = out.pop().unwrap_or_default();
        if let Some(prev) = out.last_mut() {
            prev.extend(tail);
        }
    }
    out
}

/// Trains `model` in place. On return the parameters are those of the epoch
/// with the best validation perplexity (the last epoch when there is no
/// validation set).
pub fn fit(model: &mut TopicModel, data: &TrainData) -> Result<FitReport, ModelError> {
    if data.train.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    check_slices(model, data.train.len(), data.train_slices.as_ref())?;
    check_slices(model, data.validation.len(), data.validation_slices.as_ref())?;
    let config = model.config.clone();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut noise = NoiseSource::from_rng(ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1)), GammaDraw::Rejection);
    let mut adam = Adam::new(config.adam, &model.store);
    let n = data.train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let min_rows = if config.batch_norm { 2 } else { 1 };

    let mut report = FitReport {
        epochs: Vec::new(),
        best_epoch: None,
        best_perplexity: None,
        stopped_early: false,
    };
    let mut best_store = None;
    let mut wait = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let weight = kl_anneal_weight(epoch, config.anneal_warmup);
        let mut elbo = 0.0;
        let mut recon = 0.0;
        let mut kl: BTreeMap<String, f64> = BTreeMap::new();
        for (bi, idx) in minibatches(&order, config.batch_size, min_rows).into_iter().enumerate() {
            let batch = Batch {
                docs: idx.iter().map(|&i| data.train[i].clone()).collect(),
                slices: data.train_slices.as_ref().map(|s| idx.iter().map(|&i| s[i]).collect()),
                corpus_size: n,
            };
            let out = model.forward(&batch, &mut Sampling::Stochastic(&mut noise), true, weight)?;
            let nonfinite = |term: &str| ModelError::NonFinite {
                term: term.to_string(),
                epoch,
                batch: bi,
            };
            if let Some((name, _)) = out.breakdown.terms().find(|(_, v)| !v.is_finite()) {
                return Err(nonfinite(name));
            }
            if !out.breakdown.reconstruction.is_finite() {
                return Err(nonfinite("reconstruction"));
            }
            let grads = out.graph.backward(out.loss)?;
            let param_grads = out.graph.param_grads(&grads);
            if let Some((id, _)) = param_grads.iter().find(|(_, t)| !t.all_finite()) {
                return Err(nonfinite(&format!("gradient of {}", model.store.get(*id).name)));
            }
            model.store.zero_grad();
            model.store.accumulate(&param_grads);
            if let Some(max) = config.clip_norm {
                clip_gradients(&mut model.store, max);
            }
            adam.step(&mut model.store);
            out.pending.apply(&mut model.store);

            elbo += out.breakdown.total;
            recon += out.breakdown.reconstruction;
            for (name, v) in out.breakdown.terms() {
                *kl.entry(name.clone()).or_default() += v;
            }
        }
        let per_doc = |x: f64| x / n as f64;
        let val_perplexity = if data.validation.is_empty() {
            None
        } else {
            Some(model.perplexity(&data.validation, data.validation_slices.as_deref())?)
        };
        let (docs, slices) = if data.validation.is_empty() {
            (&data.train, data.train_slices.as_ref())
        } else {
            (&data.validation, data.validation_slices.as_ref())
        };
        let probe = Batch {
            docs: docs.clone(),
            slices: slices.cloned(),
            corpus_size: n,
        };
        let mix: Tensor = model.document_topics(&probe)?;
        report.epochs.push(EpochMetrics {
            epoch,
            elbo: per_doc(elbo),
            reconstruction: per_doc(recon),
            kl: kl.into_iter().map(|(k, v)| (k, per_doc(v))).collect(),
            kl_weight: weight,
            val_perplexity,
            effective_topics: active_topics(&mix, EFFECTIVE_TOPIC_THRESHOLD).len(),
        });

        if let Some(ppl) = val_perplexity {
            if !ppl.is_finite() {
                return Err(ModelError::NonFinite {
                    term: "validation perplexity".into(),
                    epoch,
                    batch: 0,
                });
            }
            let improved = match report.best_perplexity {
                None => true,
                Some(best) => ppl < best * (1.0 - config.min_delta),
            };
            if improved {
                report.best_perplexity = Some(ppl);
                report.best_epoch = Some(epoch);
                best_store = Some(model.store.clone());
                wait = 0;
            } else {
                wait += 1;
                if config.patience > 0 && wait >= config.patience {
                    report.stopped_early = true;
                    break;
                }
            }
        } else {
            report.best_epoch = Some(epoch);
        }
    }
    if let Some(store) = best_store {
        model.store = store;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::minibatches;

    #[test]
    fn trailing_singleton_is_merged() {
        let order: Vec<usize> = (0..5).collect();
        let b = minibatches(&order, 2, 2);
        assert_eq!(b, vec![vec![0, 1], vec![2, 3, 4]]);
        assert_eq!(minibatches(&order, 2, 1).len(), 3);
    }
}
