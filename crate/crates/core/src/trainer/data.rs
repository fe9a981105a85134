use std::collections::HashSet;

use super::TrainError;
use crate::corpus::{
    build_vocabulary, partition, to_bow, tokenize_sequence, BowVector, Corpus, CorpusError, Document, PartitionSet,
    SequenceVocab, TokenSequence, Vocabulary,
};

/// A document in every form the models read.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedDoc {
    pub id: String,
    pub label: usize,
    /// Empty when no word of the document is in the topic vocabulary.
    pub bow: BowVector,
    /// `CLS` + content, padded to the full length; read by the baselines.
    pub full: TokenSequence,
    pub parts: PartitionSet,
}

/// Vocabulary choices made before any model is built.
#[derive(Clone, Debug, Default)]
pub struct DataSettings {
    pub f_min: u64,
    pub stopwords: HashSet<String>,
    /// Encoder vocabulary cutoff.
    pub seq_min_count: u64,
    pub max_len: usize,
    pub p: usize,
}

/// Splits with shared vocabularies and partitioning.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub seq_vocab: SequenceVocab,
    pub max_len: usize,
    pub p: usize,
    pub num_labels: usize,
    pub train: Vec<PreparedDoc>,
    pub dev: Vec<PreparedDoc>,
    pub test: Vec<PreparedDoc>,
}

impl Dataset {
    /// Builds both vocabularies from the training split.
    pub fn build(corpus: &Corpus, settings: &DataSettings) -> Result<Self, TrainError> {
        let vocab = build_vocabulary(&corpus.train, settings.f_min, &settings.stopwords)?;
        let seq_vocab = SequenceVocab::build(&corpus.train, settings.seq_min_count);
        Self::with_vocabularies(corpus, vocab, seq_vocab, settings.max_len, settings.p)
    }

    pub fn with_vocabularies(
        corpus: &Corpus,
        vocab: Vocabulary,
        seq_vocab: SequenceVocab,
        max_len: usize,
        p: usize,
    ) -> Result<Self, TrainError> {
        let prep = |docs: &[Document]| -> Result<Vec<PreparedDoc>, TrainError> {
            docs.iter().map(|d| PreparedDoc::new(d, &vocab, &seq_vocab, max_len, p)).collect()
        };
        Ok(Self {
            train: prep(&corpus.train)?,
            dev: prep(&corpus.dev)?,
            test: prep(&corpus.test)?,
            num_labels: corpus.num_labels,
            vocab: vocab.clone(),
            seq_vocab: seq_vocab.clone(),
            max_len,
            p,
        })
    }

    /// Partition length `x = max_len / p`.
    pub fn x(&self) -> usize {
        self.max_len / self.p
    }

    /// The same documents split into `p` partitions instead.
    pub fn repartitioned(&self, p: usize) -> Result<Self, TrainError> {
        let redo = |docs: &[PreparedDoc]| -> Result<Vec<PreparedDoc>, TrainError> {
            docs.iter()
                .map(|d| {
                    let content = TokenSequence::new(d.parts.content());
                    Ok(PreparedDoc {
                        parts: partition(&content, p, self.max_len, &d.id)?,
                        ..d.clone()
                    })
                })
                .collect()
        };
        Ok(Self {
            train: redo(&self.train)?,
            dev: redo(&self.dev)?,
            test: redo(&self.test)?,
            p,
            ..self.clone()
        })
    }
}

impl PreparedDoc {
    /// Bag of words, full sequence and partitions of `doc`.
    pub fn new(
        doc: &Document,
        vocab: &Vocabulary,
        seq_vocab: &SequenceVocab,
        max_len: usize,
        p: usize,
    ) -> Result<PreparedDoc, TrainError> {
        let bow = match to_bow(doc, vocab) {
            Ok(b) => b,
            Err(CorpusError::EmptyBow { .. }) => BowVector::from_counts([]),
            Err(e) => return Err(e.into()),
        };
        let seq = tokenize_sequence(doc, seq_vocab, max_len);
        let full = partition(&seq, 1, max_len, &doc.id)?.partitions.remove(0);
        Ok(PreparedDoc {
            id: doc.id.clone(),
            label: doc.label,
            bow,
            full,
            parts: partition(&seq, p, max_len, &doc.id)?,
        })
    }
}
