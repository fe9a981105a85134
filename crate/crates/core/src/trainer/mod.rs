//! Topic-model pretraining, joint fine-tuning, frozen-encoder baselines and
//! evaluation, all seeded for exact reproducibility.

mod adam;
mod baseline;
mod data;
mod joint;
mod metrics;
mod pretrain;

use std::fmt;
use std::str::FromStr;

pub use adam::Adam;
pub use baseline::{baseline_features, run_baseline, BaselineModel, Logistic, BASELINE_LR};
pub use data::{DataSettings, Dataset, PreparedDoc};
pub use joint::{document_log_probs, evaluate, finetune_joint, init_model, EVAL_BATCH};
pub use metrics::{
    classification_scores, mean_std, retention, summarize, ClassScores, EpochStats, Evaluation, MeanStd,
    MetricsRecord, RunMetrics, Summary,
};
pub use pretrain::{dev_elbo, pretrain_nvdm, PretrainReport};

use crate::corpus::{CorpusError, VALID_PARTITION_COUNTS};
use crate::fusion::DEFAULT_ALPHA;
use crate::numkernel::KernelError;
use crate::nvdm::{DEFAULT_HIDDEN, DEFAULT_SAMPLES, DEFAULT_TOPICS};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("{0}")]
    Contract(String),
}

/// What a run trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Topic model and encoder fine-tuned jointly.
    TopicFused,
    /// Encoder and head alone.
    EncoderOnly,
    /// Logistic regression on frozen mean-pooled encoder states.
    BertAvg,
    /// As [`Mode::BertAvg`] with the topic vector appended.
    BertAvgDtr,
    /// Topic model alone.
    NvdmPretrain,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::TopicFused,
        Mode::EncoderOnly,
        Mode::BertAvg,
        Mode::BertAvgDtr,
        Mode::NvdmPretrain,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::TopicFused => "topicfused",
            Mode::EncoderOnly => "encoder_only",
            Mode::BertAvg => "bert_avg",
            Mode::BertAvgDtr => "bert_avg_dtr",
            Mode::NvdmPretrain => "nvdm_pretrain",
        }
    }

    pub fn uses_topics(self) -> bool {
        matches!(self, Mode::TopicFused | Mode::BertAvgDtr | Mode::NvdmPretrain)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| TrainError::Contract(format!("unknown mode {s:?}")))
    }
}

/// Label of a run: the mode plus the partition length for the
/// fine-tuned modes, e.g. `topicfused-256` for `p = 2` of 512.
pub fn run_id(mode: Mode, max_len: usize, p: usize) -> String {
    match mode {
        Mode::TopicFused | Mode::EncoderOnly => format!("{mode}-{}", max_len / p.max(1)),
        _ => mode.to_string(),
    }
}

/// Sizes of the two networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelShape {
    pub topics: usize,
    pub nvdm_hidden: usize,
    pub enc_layers: usize,
    pub enc_hidden: usize,
    pub enc_heads: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            topics: DEFAULT_TOPICS,
            nvdm_hidden: DEFAULT_HIDDEN,
            enc_layers: 2,
            enc_hidden: 32,
            enc_heads: 4,
        }
    }
}

pub const DEFAULT_EPOCHS: usize = 15;
pub const DEFAULT_BATCH: usize = 4;
pub const DEFAULT_NVDM_LR: f64 = 0.001;
/// Ten times the usual fine-tuning rate: the encoder starts from random
/// weights, not a pretrained checkpoint.
pub const DEFAULT_ENC_LR: f64 = 2e-4;
pub const DEFAULT_SEEDS: [u64; 3] = [1, 2, 3];

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Documents per batch; each brings all of its partitions.
    pub batch: usize,
    pub nvdm_lr: f64,
    /// Rate of the encoder and the fusion head.
    pub enc_lr: f64,
    pub alpha: f64,
    pub p: usize,
    pub seeds: Vec<u64>,
    pub mode: Mode,
    /// Posterior samples per document in training.
    pub samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            batch: DEFAULT_BATCH,
            nvdm_lr: DEFAULT_NVDM_LR,
            enc_lr: DEFAULT_ENC_LR,
            alpha: DEFAULT_ALPHA,
            p: 2,
            seeds: DEFAULT_SEEDS.to_vec(),
            mode: Mode::TopicFused,
            samples: DEFAULT_SAMPLES,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Contract("epochs must be at least 1".into()));
        }
        if self.batch == 0 {
            return Err(TrainError::Contract("batch size must be at least 1".into()));
        }
        if !VALID_PARTITION_COUNTS.contains(&self.p) {
            return Err(TrainError::Contract(format!("p = {} is not one of 1, 2, 4, 8", self.p)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(TrainError::Contract(format!("alpha = {} is not in (0, 1)", self.alpha)));
        }
        if !(self.nvdm_lr >= 0.0 && self.enc_lr >= 0.0) {
            return Err(TrainError::Contract("learning rates must be non-negative".into()));
        }
        if self.samples == 0 {
            return Err(TrainError::Contract("at least one posterior sample".into()));
        }
        Ok(())
    }
}

/// Tags separating the random streams of one seed.
pub(crate) mod stream {
    pub const NVDM_INIT: u64 = 1;
    pub const MODEL_INIT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const DEV_NOISE: u64 = 5;
    pub const BASELINE: u64 = 6;
}
