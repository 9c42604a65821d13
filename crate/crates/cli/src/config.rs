use std::fs;
use std::path::{Path, PathBuf};

use sbtm_core::corpus::{Granularity, SplitRatios};
use sbtm_core::models::{ModelConfig, EFFECTIVE_TOPIC_THRESHOLD};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const RESOLVED_CONFIG: &str = "config.resolved.json";

/// Everything a run needs. Relative paths are taken relative to the config
/// file; the resolved copy written next to the outputs holds absolute ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub stopwords: Option<PathBuf>,
    /// Optional `token v1 … vL` file used to initialize word embeddings.
    pub embeddings: Option<PathBuf>,
    pub out: PathBuf,
    pub prep: PrepOptions,
    pub split: SplitRatios,
    pub model: ModelConfig,
    pub eval: EvalOptions,
    pub topics: TopicOptions,
    pub neighbors: NeighborOptions,
    pub trajectories: TrajectoryOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::new(),
            stopwords: None,
            embeddings: None,
            out: PathBuf::from("out"),
            prep: PrepOptions::default(),
            split: SplitRatios::default(),
            model: ModelConfig::default(),
            eval: EvalOptions::default(),
            topics: TopicOptions::default(),
            neighbors: NeighborOptions::default(),
            trajectories: TrajectoryOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocFreqScope {
    /// Count document frequencies on the training split only.
    Train,
    Corpus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepOptions {
    pub min_doc_freq: usize,
    pub doc_freq_scope: DocFreqScope,
    pub lowercase: bool,
    /// Documents with more tokens are dropped before splitting.
    pub max_length: Option<usize>,
    /// Used only when the corpus is timestamped.
    pub granularity: Granularity,
}

impl Default for PrepOptions {
    fn default() -> Self {
        Self {
            min_doc_freq: 4,
            doc_freq_scope: DocFreqScope::Train,
            lowercase: false,
            max_length: None,
            granularity: Granularity::Month,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Validation,
    Test,
    /// Every split together.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopicSet {
    /// Topics whose mean proportion on the evaluated split reaches the threshold.
    Effective,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// Held-out documents scored for perplexity.
    pub split: SplitName,
    /// Documents feeding the co-occurrence statistics.
    pub reference: SplitName,
    pub coherence_words: usize,
    pub diversity_words: usize,
    pub topics: TopicSet,
    pub threshold: f64,
    /// Score with one posterior sample per document instead of the means.
    pub sampled: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            split: SplitName::Test,
            reference: SplitName::Train,
            coherence_words: 10,
            diversity_words: 25,
            topics: TopicSet::Effective,
            threshold: EFFECTIVE_TOPIC_THRESHOLD,
            sampled: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopicOptions {
    pub words: usize,
}

impl Default for TopicOptions {
    fn default() -> Self {
        Self { words: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborTarget {
    Word,
    Topic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeighborOptions {
    pub queries: Vec<String>,
    pub count: usize,
    pub kind: NeighborTarget,
}

impl Default for NeighborOptions {
    fn default() -> Self {
        Self {
            queries: Vec::new(),
            count: 10,
            kind: NeighborTarget::Word,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoryOptions {
    /// Words to trace in every topic. When absent, each topic traces the
    /// union over slices of its own top words.
    pub words: Option<Vec<String>>,
    pub top: usize,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        Self { words: None, top: 10 }
    }
}

fn absolute(base: &Path, p: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(base.join(p)).map_err(|e| CliError::io(p, e))
}

impl RunConfig {
    /// Reads `path`, applies the command-line overrides, anchors relative
    /// paths at the config's directory and validates the result.
    pub fn load(path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if config.corpus.as_os_str().is_empty() {
            return Err(CliError::Config("`corpus` is required".into()));
        }
        config.corpus = absolute(base, &config.corpus)?;
        config.stopwords = config.stopwords.map(|p| absolute(base, &p)).transpose()?;
        config.embeddings = config.embeddings.map(|p| absolute(base, &p)).transpose()?;
        config.out = match out {
            Some(o) => std::path::absolute(o).map_err(|e| CliError::io(o, e))?,
            None => absolute(base, &config.out)?,
        };
        if let Some(s) = seed {
            config.model.seed = s;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate()?;
        self.split
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.prep.min_doc_freq == 0 {
            return Err(CliError::Config("prep.min_doc_freq must be at least 1".into()));
        }
        if self.eval.coherence_words < 2 {
            return Err(CliError::Config("eval.coherence_words must be at least 2".into()));
        }
        if self.eval.diversity_words == 0 || self.topics.words == 0 || self.trajectories.top == 0 {
            return Err(CliError::Config("word counts must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            return Err(CliError::Config("eval.threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Writes the resolved config into the output directory.
    pub fn write_resolved(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))?;
        let path = self.out.join(RESOLVED_CONFIG);
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }
}
