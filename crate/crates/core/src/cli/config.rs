use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::trainer::{Mode, ModelShape, TrainConfig};

/// Every key a config file may set, in the order [`Config::to_text`]
/// writes them.
pub const KEYS: [&str; 20] = [
    "corpus.train",
    "corpus.dev",
    "corpus.test",
    "corpus.stopwords",
    "vocab.f_min",
    "nvdm.k",
    "nvdm.h",
    "nvdm.samples",
    "nvdm.lr",
    "enc.layers",
    "enc.hidden",
    "enc.heads",
    "enc.max_len",
    "enc.lr",
    "train.epochs",
    "train.batch",
    "train.alpha",
    "train.p",
    "train.seeds",
    "mode",
];

/// Frequency cutoff of the topic vocabulary when none is configured.
pub const DEFAULT_F_MIN: u64 = 10;
/// Full encoder input length `N` when none is configured.
pub const DEFAULT_MAX_LEN: usize = 512;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key {key:?} set twice")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("{key}: {message}")]
    Value { key: String, message: String },
}

/// A flat `key=value` experiment description. Unset keys keep their
/// defaults; corpus paths have none.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub corpus_train: Option<PathBuf>,
    pub corpus_dev: Option<PathBuf>,
    pub corpus_test: Option<PathBuf>,
    pub corpus_stopwords: Option<PathBuf>,
    pub f_min: u64,
    pub shape: ModelShape,
    pub max_len: usize,
    pub train: TrainConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            corpus_train: None,
            corpus_dev: None,
            corpus_test: None,
            corpus_stopwords: None,
            f_min: DEFAULT_F_MIN,
            shape: ModelShape::default(),
            max_len: DEFAULT_MAX_LEN,
            train: TrainConfig::default(),
        }
    }
}

fn value<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    raw.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.into(),
        message: format!("{raw:?}: {e}"),
    })
}

impl Config {
    /// Parses config text. `#` starts a comment; blank lines are ignored.
    /// Relative corpus paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        let mut seen: Vec<&str> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, val) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, val) = (key.trim(), val.trim());
            let Some(&known) = KEYS.iter().find(|&&k| k == key) else {
                return Err(ConfigError::UnknownKey { line, key: key.into() });
            };
            if seen.contains(&known) {
                return Err(ConfigError::Duplicate { line, key: key.into() });
            }
            seen.push(known);
            c.set(known, val, base)?;
        }
        c.validate()?;
        Ok(c)
    }

    fn set(&mut self, key: &str, v: &str, base: &Path) -> Result<(), ConfigError> {
        let path = || Some(base.join(v));
        match key {
            "corpus.train" => self.corpus_train = path(),
            "corpus.dev" => self.corpus_dev = path(),
            "corpus.test" => self.corpus_test = path(),
            "corpus.stopwords" => self.corpus_stopwords = path(),
            "vocab.f_min" => self.f_min = value(key, v)?,
            "nvdm.k" => self.shape.topics = value(key, v)?,
            "nvdm.h" => self.shape.nvdm_hidden = value(key, v)?,
            "nvdm.samples" => self.train.samples = value(key, v)?,
            "nvdm.lr" => self.train.nvdm_lr = value(key, v)?,
            "enc.layers" => self.shape.enc_layers = value(key, v)?,
            "enc.hidden" => self.shape.enc_hidden = value(key, v)?,
            "enc.heads" => self.shape.enc_heads = value(key, v)?,
            "enc.max_len" => self.max_len = value(key, v)?,
            "enc.lr" => self.train.enc_lr = value(key, v)?,
            "train.epochs" => self.train.epochs = value(key, v)?,
            "train.batch" => self.train.batch = value(key, v)?,
            "train.alpha" => self.train.alpha = value(key, v)?,
            "train.p" => self.train.p = value(key, v)?,
            "train.seeds" => {
                self.train.seeds = v
                    .split(',')
                    .map(|s| value(key, s.trim()))
                    .collect::<Result<_, _>>()?;
            }
            "mode" => {
                self.train.mode = v.parse::<Mode>().map_err(|e| ConfigError::Value {
                    key: key.into(),
                    message: e.to_string(),
                })?;
            }
            _ => unreachable!("key list and setter agree"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, message: String| {
            Err(ConfigError::Value {
                key: key.into(),
                message,
            })
        };
        if let Err(e) = self.train.validate() {
            return bad("train", e.to_string());
        }
        if self.train.seeds.is_empty() {
            return bad("train.seeds", "at least one seed".into());
        }
        if self.f_min == 0 {
            return bad("vocab.f_min", "must be at least 1".into());
        }
        let s = &self.shape;
        for (key, v) in [
            ("nvdm.k", s.topics),
            ("nvdm.h", s.nvdm_hidden),
            ("enc.layers", s.enc_layers),
            ("enc.hidden", s.enc_hidden),
            ("enc.heads", s.enc_heads),
        ] {
            if v == 0 {
                return bad(key, "must be positive".into());
            }
        }
        if !s.enc_hidden.is_multiple_of(s.enc_heads) {
            return bad("enc.heads", format!("{} heads do not divide hidden size {}", s.enc_heads, s.enc_hidden));
        }
        if self.max_len < 2 * self.train.p || !self.max_len.is_multiple_of(self.train.p) {
            return bad("enc.max_len", format!("{} cannot be split into {} partitions", self.max_len, self.train.p));
        }
        Ok(())
    }

    /// Canonical text that parses back to an equal config (given absolute
    /// corpus paths).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        for (k, p) in [
            ("corpus.train", &self.corpus_train),
            ("corpus.dev", &self.corpus_dev),
            ("corpus.test", &self.corpus_test),
            ("corpus.stopwords", &self.corpus_stopwords),
        ] {
            if let Some(p) = p {
                put(k, p.display().to_string());
            }
        }
        let t = &self.train;
        let s = &self.shape;
        put("vocab.f_min", self.f_min.to_string());
        put("nvdm.k", s.topics.to_string());
        put("nvdm.h", s.nvdm_hidden.to_string());
        put("nvdm.samples", t.samples.to_string());
        put("nvdm.lr", t.nvdm_lr.to_string());
        put("enc.layers", s.enc_layers.to_string());
        put("enc.hidden", s.enc_hidden.to_string());
        put("enc.heads", s.enc_heads.to_string());
        put("enc.max_len", self.max_len.to_string());
        put("enc.lr", t.enc_lr.to_string());
        put("train.epochs", t.epochs.to_string());
        put("train.batch", t.batch.to_string());
        put("train.alpha", t.alpha.to_string());
        put("train.p", t.p.to_string());
        put(
            "train.seeds",
            t.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
        );
        put("mode", t.mode.to_string());
        out
    }
}
