use std::collections::HashSet;

use super::{normalize, Document, Vocabulary};

pub const PAD_ID: usize = 0;
pub const CLS_ID: usize = 1;
pub const UNK_ID: usize = 2;
const RESERVED: usize = 3;

/// Word-level vocabulary for the encoder. Ids 0..3 are `PAD`, `CLS`,
/// `UNK`; word `i` of the inner vocabulary has id `i + 3`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceVocab {
    words: Vocabulary,
}

impl SequenceVocab {
    /// Keeps every training word seen at least `min_count` times. No
    /// stopword filtering: the encoder reads running text.
    pub fn build(train_docs: &[Document], min_count: u64) -> Self {
        Self {
            words: Vocabulary::count(train_docs, min_count.max(1), &HashSet::new()),
        }
    }

    pub fn from_words(words: Vocabulary) -> Self {
        Self { words }
    }

    /// Number of ids including the reserved ones.
    pub fn len(&self) -> usize {
        self.words.len() + RESERVED
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> usize {
        self.words.id(word).map_or(UNK_ID, |i| i + RESERVED)
    }

    pub fn words(&self) -> &Vocabulary {
        &self.words
    }
}

/// Token ids of one input to the encoder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>) -> Self {
        Self { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// `true` where the position holds a real token (not padding).
    pub fn mask(&self) -> Vec<bool> {
        self.ids.iter().map(|&i| i != PAD_ID).collect()
    }
}

/// Content token ids of `doc` (no `CLS`), truncated to `max_len - 1` so a
/// `CLS` still fits.
pub fn tokenize_sequence(doc: &Document, vocab: &SequenceVocab, max_len: usize) -> TokenSequence {
    TokenSequence::new(
        normalize(&doc.text)
            .map(|w| vocab.id(&w))
            .take(max_len.saturating_sub(1))
            .collect(),
    )
}
