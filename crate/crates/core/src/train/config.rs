//! Training configuration, read from JSON.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::synthetic::SyntheticTask;
use crate::adjacency::ScorerActivation;
use crate::eigencentrality::PowerConfig;
use crate::error::{Error, Result};
use crate::model::{AggregatorKind, Architecture, EncoderKind, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Sentence,
    Document,
    Pair,
    #[default]
    Synthetic,
}

impl TaskKind {
    pub fn architecture(self) -> Architecture {
        match self {
            TaskKind::Sentence | TaskKind::Synthetic => Architecture::Flat,
            TaskKind::Document => Architecture::Hierarchical,
            TaskKind::Pair => Architecture::Pair,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Sentence => "sentence",
            TaskKind::Document => "document",
            TaskKind::Pair => "pair",
            TaskKind::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [TaskKind::Sentence, TaskKind::Document, TaskKind::Pair, TaskKind::Synthetic]
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown task {s:?} (sentence|document|pair|synthetic)")))
    }
}

/// Hyper-parameters and data locations. Defaults follow the document
/// classification column of the reference settings; [`TrainConfig::nli`]
/// gives the pair-task column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub task: TaskKind,
    pub train_path: Option<PathBuf>,
    pub dev_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub pretrained_embeddings: Option<PathBuf>,
    /// Vocabulary frequency threshold.
    pub min_count: usize,

    pub embedding_size: usize,
    #[serde(alias = "lstm_hidden_unit")]
    pub encoder_hidden_units: usize,
    pub encoder: EncoderKind,
    pub connectivity_hidden_units: usize,
    pub head_hidden_units: usize,
    pub scorer_activation: ScorerActivation,

    pub regularization_rate: f64,
    pub initial_learning_rate: f64,
    pub learning_rate_decay: f64,
    pub learning_rate_decay_steps: usize,
    pub initial_batch_size: usize,
    pub batch_size_low_bound: usize,
    /// Split a batch while `size × longest sequence` exceeds this.
    pub max_batch_tokens: usize,
    pub dropout_rate: f64,
    pub clip_norm: Option<f64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,

    pub epochs: usize,
    pub seed: u64,
    pub aggregator: AggregatorKind,
    pub power: PowerConfig,
    pub synthetic: SyntheticTask,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: TaskKind::Synthetic,
            train_path: None,
            dev_path: None,
            test_path: None,
            pretrained_embeddings: None,
            min_count: 1,
            embedding_size: 300,
            encoder_hidden_units: 300,
            encoder: EncoderKind::BidirectionalElman,
            connectivity_hidden_units: 50,
            head_hidden_units: 300,
            scorer_activation: ScorerActivation::Tanh,
            regularization_rate: 1e-6,
            initial_learning_rate: 1e-4,
            learning_rate_decay: 0.9,
            learning_rate_decay_steps: 2000,
            initial_batch_size: 64,
            batch_size_low_bound: 32,
            max_batch_tokens: 64 * 400,
            dropout_rate: 0.6,
            clip_norm: Some(5.0),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            epochs: 10,
            seed: 2019,
            aggregator: AggregatorKind::Eigen,
            power: PowerConfig::default(),
            synthetic: SyntheticTask::default(),
        }
    }
}

impl TrainConfig {
    /// Pair-task column of the reference settings.
    pub fn nli() -> Self {
        TrainConfig {
            task: TaskKind::Pair,
            connectivity_hidden_units: 30,
            regularization_rate: 1e-20,
            learning_rate_decay: 0.95,
            learning_rate_decay_steps: 20000,
            initial_batch_size: 128,
            batch_size_low_bound: 128,
            dropout_rate: 0.2,
            ..TrainConfig::default()
        }
    }

    /// Small settings that train the synthetic task in seconds.
    pub fn synthetic_quick() -> Self {
        TrainConfig {
            task: TaskKind::Synthetic,
            embedding_size: 16,
            encoder_hidden_units: 8,
            connectivity_hidden_units: 8,
            head_hidden_units: 16,
            initial_learning_rate: 1e-2,
            learning_rate_decay: 0.9,
            learning_rate_decay_steps: 500,
            initial_batch_size: 32,
            batch_size_low_bound: 8,
            dropout_rate: 0.1,
            epochs: 20,
            ..TrainConfig::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.embedding_size == 0 || self.encoder_hidden_units == 0 || self.head_hidden_units == 0 {
            return bad("layer sizes must be positive".into());
        }
        if self.aggregator == AggregatorKind::Eigen && self.connectivity_hidden_units == 0 {
            return bad("connectivity_hidden_units must be positive".into());
        }
        if !(self.initial_learning_rate > 0.0) {
            return bad(format!("initial_learning_rate must be > 0, got {}", self.initial_learning_rate));
        }
        if !(self.learning_rate_decay > 0.0 && self.learning_rate_decay <= 1.0) {
            return bad(format!("learning_rate_decay must be in (0, 1], got {}", self.learning_rate_decay));
        }
        if self.learning_rate_decay_steps == 0 {
            return bad("learning_rate_decay_steps must be >= 1".into());
        }
        if self.initial_batch_size == 0 || self.batch_size_low_bound == 0 {
            return bad("batch sizes must be >= 1".into());
        }
        if self.batch_size_low_bound > self.initial_batch_size {
            return bad("batch_size_low_bound exceeds initial_batch_size".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate));
        }
        if !(self.regularization_rate >= 0.0) {
            return bad("regularization_rate must be >= 0".into());
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad(format!("clip_norm must be > 0, got {c}"));
            }
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_epsilon > 0.0) {
            return bad("adam betas must be in [0, 1) and epsilon > 0".into());
        }
        self.power.validate()?;
        if self.task == TaskKind::Synthetic {
            self.synthetic.validate()?;
        }
        Ok(())
    }

    pub fn model_spec(&self, vocab_size: usize, n_classes: usize) -> ModelSpec {
        ModelSpec {
            architecture: self.task.architecture(),
            vocab_size,
            n_classes,
            embedding_size: self.embedding_size,
            encoder: self.encoder,
            encoder_hidden_units: self.encoder_hidden_units,
            connectivity_hidden_units: self.connectivity_hidden_units,
            head_hidden_units: self.head_hidden_units,
            aggregator: self.aggregator,
            dropout_rate: self.dropout_rate,
            power: self.power,
            scorer_activation: self.scorer_activation,
        }
    }

    /// `base · decay^(step / decay_steps)`, continuous in `step`.
    pub fn learning_rate(&self, step: u64) -> f64 {
        self.initial_learning_rate
            * self
                .learning_rate_decay
                .powf(step as f64 / self.learning_rate_decay_steps as f64)
    }
}
