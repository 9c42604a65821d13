//! The topic-model family: ETM, SB-VAE, EDP, EHDP and their dynamic
//! counterparts D-ETM and D-EDP.

mod checkpoint;
mod forward;
mod inspect;
mod noise;
mod train;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::nn::{glorot_normal, Activation, Linear, Lstm, Mlp};
use crate::autodiff::{AdamConfig, AutodiffError, ParamId, ParamStore, Tensor};
use crate::distributions::DistributionError;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CheckpointError};
pub use forward::{Batch, ElboBreakdown, ForwardOutput, Posterior};
pub use inspect::{effective_topics, load_word_embeddings, nearest_neighbors, topic_word_matrix, topic_words, NeighborKind};
pub use noise::{GammaDraw, NoiseSource, Sampling};
pub use train::{fit, EpochMetrics, FitReport, TrainData, EFFECTIVE_TOPIC_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Etm,
    SbVae,
    Edp,
    Ehdp,
    Detm,
    Dedp,
}

impl ModelKind {
    pub fn is_dynamic(self) -> bool {
        matches!(self, ModelKind::Detm | ModelKind::Dedp)
    }

    /// Models whose mixture weights come from stick breaking.
    pub fn is_stick_breaking(self) -> bool {
        matches!(self, ModelKind::SbVae | ModelKind::Edp | ModelKind::Ehdp | ModelKind::Dedp)
    }

    pub fn has_embeddings(self) -> bool {
        self != ModelKind::SbVae
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Etm => "etm",
            ModelKind::SbVae => "sb_vae",
            ModelKind::Edp => "edp",
            ModelKind::Ehdp => "ehdp",
            ModelKind::Detm => "detm",
            ModelKind::Dedp => "dedp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Topic count, or truncation level for the stick-breaking models.
    pub num_topics: usize,
    pub embedding_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub batch_norm: bool,
    pub dropout: f64,
    /// Monte Carlo samples per document.
    pub samples: usize,
    /// GEM concentration β of the Beta(1, β) stick prior.
    pub prior_beta: f64,
    /// Gamma hyperprior on β, shape/rate.
    pub gamma_shape: f64,
    pub gamma_rate: f64,
    /// Random-walk variance of the latent means η.
    pub delta_sq: f64,
    /// Random-walk variance of the dynamic topic embeddings.
    pub gamma_sq: f64,
    /// Variance of θ around η.
    pub theta_var: f64,
    pub taylor_terms: usize,
    /// Width of the projection of slice-level word frequencies fed to the LSTM.
    pub eta_projection: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub adam: AdamConfig,
    pub clip_norm: Option<f64>,
    pub anneal_warmup: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    /// Relative improvement of validation perplexity that resets patience.
    pub min_delta: f64,
    /// Decode with softmax(π·ξ) instead of the mixture π·ξ.
    pub double_softmax: bool,
    /// EHDP: use the literal term list (including 2·log(ab)) instead of the
    /// expectation of log p(v | β) under q(β). The literal form is unbounded
    /// above and kept for auditing only.
    pub ehdp_printed_terms: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Edp,
            num_topics: 10,
            embedding_dim: 50,
            hidden: vec![100, 100],
            activation: Activation::Relu,
            batch_norm: false,
            dropout: 0.0,
            samples: 1,
            prior_beta: 5.0,
            gamma_shape: 1.0,
            gamma_rate: 20.0,
            delta_sq: 0.005,
            gamma_sq: 0.005,
            theta_var: 1.0,
            taylor_terms: crate::distributions::DEFAULT_TAYLOR_TERMS,
            eta_projection: 64,
            lstm_hidden: 64,
            lstm_layers: 1,
            adam: AdamConfig::default(),
            clip_norm: Some(2.0),
            anneal_warmup: 0,
            batch_size: 1000,
            epochs: 100,
            patience: 10,
            min_delta: 0.001,
            double_softmax: false,
            ehdp_printed_terms: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.num_topics < 2 {
            return bad("num_topics must be at least 2");
        }
        if self.samples < 1 {
            return bad("samples must be at least 1");
        }
        if self.embedding_dim == 0 || self.hidden.contains(&0) {
            return bad("layer sizes must be positive");
        }
        for (name, v) in [
            ("prior_beta", self.prior_beta),
            ("gamma_shape", self.gamma_shape),
            ("gamma_rate", self.gamma_rate),
            ("delta_sq", self.delta_sq),
            ("gamma_sq", self.gamma_sq),
            ("theta_var", self.theta_var),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ModelError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.taylor_terms == 0 {
            return bad("taylor_terms must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.kind.is_dynamic() && (self.lstm_layers == 0 || self.lstm_hidden == 0 || self.eta_projection == 0) {
            return bad("dynamic models need a non-empty LSTM");
        }
        Ok(())
    }

    /// Dimension of the Gaussian or stick-fraction latent per document.
    pub fn latent_dim(&self) -> usize {
        match self.kind {
            ModelKind::Etm | ModelKind::Detm => self.num_topics,
            _ => self.num_topics - 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("document {doc} has slice {slice}, model has {slices} slices")]
    SliceOutOfRange { doc: usize, slice: usize, slices: usize },
    #[error("non-finite {term} at epoch {epoch}, batch {batch}")]
    NonFinite { term: String, epoch: usize, batch: usize },
    #[error("topic {topic} out of range (K = {k})")]
    TopicOutOfRange { topic: usize, k: usize },
    #[error("word `{0}` is not in the vocabulary")]
    UnknownWord(String),
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for ModelError {
    fn from(e: std::io::Error) -> Self {
        ModelError::Io(e.to_string())
    }
}

/// Two heads mapping the encoder's hidden state to variational parameters.
#[derive(Debug, Clone)]
pub(crate) struct Heads {
    pub first: Linear,
    pub second: Linear,
}

#[derive(Debug, Clone)]
pub(crate) struct DynamicLayout {
    pub alpha_mu: ParamId,
    pub alpha_logvar: ParamId,
    pub slice_bow: ParamId,
    pub projection: Linear,
    pub lstm: Lstm,
    pub eta_heads: Heads,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub encoder: Mlp,
    pub heads: Heads,
    pub rho: Option<ParamId>,
    /// Static topic embeddings (K × L).
    pub alpha: Option<ParamId>,
    /// SB-VAE decoder K → V.
    pub decoder: Option<Linear>,
    /// Unconstrained Gamma variational parameters (EHDP).
    pub gamma_raw: Option<(ParamId, ParamId)>,
    pub dynamic: Option<DynamicLayout>,
}

/// A model instance: configuration, parameters and their layout.
#[derive(Debug, Clone)]
pub struct TopicModel {
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub num_slices: usize,
    pub store: ParamStore,
    pub(crate) layout: Layout,
}

fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl TopicModel {
    /// Builds and initializes a model. `num_slices` must be positive for the
    /// dynamic kinds and is ignored otherwise.
    pub fn new(config: ModelConfig, vocab_size: usize, num_slices: usize) -> Result<Self, ModelError> {
        config.validate()?;
        if vocab_size < 2 {
            return Err(ModelError::Config("vocabulary needs at least two words".into()));
        }
        let dynamic = config.kind.is_dynamic();
        if dynamic && num_slices == 0 {
            return Err(ModelError::Config("dynamic models need at least one time slice".into()));
        }
        let num_slices = if dynamic { num_slices } else { 1 };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let (k, l, v) = (config.num_topics, config.embedding_dim, vocab_size);
        let latent = config.latent_dim();

        let enc_input = if dynamic { v + latent } else { v };
        let encoder = Mlp::new(
            &mut store,
            "encoder",
            enc_input,
            &config.hidden,
            config.activation,
            config.batch_norm,
            &mut rng,
        )?;
        let enc_out = encoder.output_dim().unwrap_or(enc_input);
        let heads = Heads {
            first: Linear::new(&mut store, "head.0", enc_out, latent, &mut rng)?,
            second: Linear::new(&mut store, "head.1", enc_out, latent, &mut rng)?,
        };
        let rho = if config.kind.has_embeddings() {
            Some(store.add("rho", glorot_normal(l, v, &mut rng))?)
        } else {
            None
        };
        let alpha = if config.kind.has_embeddings() && !dynamic {
            Some(store.add("alpha", glorot_normal(k, l, &mut rng))?)
        } else {
            None
        };
        let decoder = if config.kind == ModelKind::SbVae {
            Some(Linear::new(&mut store, "decoder", k, v, &mut rng)?)
        } else {
            None
        };
        let gamma_raw = if config.kind == ModelKind::Ehdp {
            // start the variational Gamma at the hyperprior, net of the parameter floor
            let init = |v: f64| softplus_inverse((v - crate::distributions::MIN_PARAM).max(crate::distributions::MIN_PARAM));
            let s = store.add("gamma.shape_raw", Tensor::scalar(init(config.gamma_shape)))?;
            let r = store.add("gamma.rate_raw", Tensor::scalar(init(config.gamma_rate)))?;
            Some((s, r))
        } else {
            None
        };
        let dynamic_layout = if dynamic {
            let alpha_mu = store.add("alpha.mu", Tensor::zeros(&[num_slices * k, l]))?;
            let alpha_logvar = store.add("alpha.logvar", Tensor::filled(&[num_slices * k, l], -4.0))?;
            let slice_bow = store.add("data.slice_bow", Tensor::zeros(&[num_slices, v]))?;
            store.get_mut(slice_bow).requires_grad = false;
            let projection = Linear::new(&mut store, "eta.projection", v, config.eta_projection, &mut rng)?;
            let lstm = Lstm::new(
                &mut store,
                "eta.lstm",
                config.eta_projection,
                config.lstm_hidden,
                config.lstm_layers,
                &mut rng,
            )?;
            let eta_heads = Heads {
                first: Linear::new(&mut store, "eta.head.0", config.lstm_hidden + latent, latent, &mut rng)?,
                second: Linear::new(&mut store, "eta.head.1", config.lstm_hidden + latent, latent, &mut rng)?,
            };
            Some(DynamicLayout {
                alpha_mu,
                alpha_logvar,
                slice_bow,
                projection,
                lstm,
                eta_heads,
            })
        } else {
            None
        };
        Ok(Self {
            config,
            vocab_size,
            num_slices,
            store,
            layout: Layout {
                encoder,
                heads,
                rho,
                alpha,
                decoder,
                gamma_raw,
                dynamic: dynamic_layout,
            },
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn num_topics(&self) -> usize {
        self.config.num_topics
    }

    /// Sets the per-slice normalized word frequencies that drive the η LSTM.
    pub fn set_slice_frequencies(&mut self, slice_bow: &[Vec<f64>]) -> Result<(), ModelError> {
        let dl = self
            .layout
            .dynamic
            .as_ref()
            .ok_or_else(|| ModelError::Unsupported("static models have no time slices".into()))?;
        if slice_bow.len() != self.num_slices || slice_bow.iter().any(|r| r.len() != self.vocab_size) {
            return Err(ModelError::Config(format!(
                "slice frequencies must be {} × {}",
                self.num_slices, self.vocab_size
            )));
        }
        let id = dl.slice_bow;
        let flat: Vec<f64> = slice_bow.iter().flatten().copied().collect();
        self.store.value_mut(id).data_mut().copy_from_slice(&flat);
        Ok(())
    }

    /// Current Gamma variational (shape, rate) of the EHDP concentration.
    pub fn concentration_posterior(&self) -> Option<(f64, f64)> {
        self.layout.gamma_raw.map(|(s, r)| {
            let f = |id| crate::distributions::special::softplus(self.store.value(id).item()) + crate::distributions::MIN_PARAM;
            (f(s), f(r))
        })
    }

    /// Named tensors in registration order.
    pub fn named_tensors(&self) -> BTreeMap<String, Tensor> {
        self.store.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect()
    }
}
