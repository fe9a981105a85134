//! Labeled documents, the topic-model vocabulary and bag-of-words view, the
//! word-level token stream for the encoder, and its `p`-way partitioning.

mod bow;
mod partition;
mod sequence;
pub mod synthetic;
mod vocab;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

pub use bow::{to_bow, BowVector};
pub use partition::{partition, PartitionSet, VALID_PARTITION_COUNTS};
pub use sequence::{tokenize_sequence, SequenceVocab, TokenSequence, CLS_ID, PAD_ID, UNK_ID};
pub use vocab::{build_vocabulary, Vocabulary};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("no word survives the frequency cutoff F_min={f_min}")]
    EmptyVocabulary { f_min: u64 },
    #[error("document {doc_id} has no in-vocabulary tokens")]
    EmptyBow { doc_id: String },
    #[error("every training document has an empty bag of words")]
    AllBowEmpty,
    #[error("partition count {p} is not one of 1, 2, 4, 8 or does not divide length {max_len}")]
    InvalidPartition { p: usize, max_len: usize },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub label: usize,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, label: usize, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            label,
            text: text.into(),
        }
    }
}

/// Lowercased alphanumeric word runs; everything else separates words.
pub fn normalize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Train/dev/test splits with a shared label count.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub train: Vec<Document>,
    pub dev: Vec<Document>,
    pub test: Vec<Document>,
    pub num_labels: usize,
}

impl Corpus {
    pub fn new(train: Vec<Document>, dev: Vec<Document>, test: Vec<Document>) -> Result<Self, CorpusError> {
        if train.is_empty() {
            return Err(CorpusError::Invalid("training split is empty".into()));
        }
        let num_labels = train
            .iter()
            .chain(&dev)
            .chain(&test)
            .map(|d| d.label + 1)
            .max()
            .unwrap_or(1)
            .max(2);
        Ok(Self {
            train,
            dev,
            test,
            num_labels,
        })
    }

    pub fn load(train: &Path, dev: &Path, test: &Path) -> Result<Self, CorpusError> {
        Self::new(read_tsv(train)?, read_tsv(dev)?, read_tsv(test)?)
    }
}

fn read_file(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses `id<TAB>label<TAB>text` lines. Blank lines are skipped.
pub fn parse_tsv(content: &str, path: &Path) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| CorpusError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let mut fields = line.splitn(3, '\t');
        let (Some(id), Some(label), text) = (fields.next(), fields.next(), fields.next()) else {
            return Err(parse_err("expected id<TAB>label<TAB>text".into()));
        };
        let label = label
            .trim()
            .parse::<usize>()
            .map_err(|e| parse_err(format!("label {label:?}: {e}")))?;
        docs.push(Document::new(id, label, text.unwrap_or("")));
    }
    Ok(docs)
}

pub fn read_tsv(path: &Path) -> Result<Vec<Document>, CorpusError> {
    parse_tsv(&read_file(path)?, path)
}

pub fn write_tsv(path: &Path, docs: &[Document]) -> std::io::Result<()> {
    let mut out = String::new();
    for d in docs {
        out.push_str(&format!("{}\t{}\t{}\n", d.id, d.label, d.text.replace(['\t', '\n'], " ")));
    }
    fs::write(path, out)
}

/// Newline-delimited stopword list; entries are normalized like text.
pub fn read_stopwords(path: &Path) -> Result<HashSet<String>, CorpusError> {
    Ok(read_file(path)?
        .lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect())
}
