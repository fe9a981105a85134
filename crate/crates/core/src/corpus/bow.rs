use std::collections::BTreeMap;

use super::{normalize, CorpusError, Document, Vocabulary};
use crate::numkernel::Tensor;

/// Sparse word counts of one document over a [`Vocabulary`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BowVector {
    counts: BTreeMap<usize, u32>,
    total: u32,
}

impl BowVector {
    /// Builds from `(index, count)` pairs; zero counts are dropped and
    /// repeated indices add up.
    pub fn from_counts(pairs: impl IntoIterator<Item = (usize, u32)>) -> Self {
        let mut counts = BTreeMap::new();
        for (i, c) in pairs {
            if c > 0 {
                *counts.entry(i).or_insert(0) += c;
            }
        }
        let total = counts.values().sum();
        Self { counts, total }
    }

    pub fn counts(&self) -> &BTreeMap<usize, u32> {
        &self.counts
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Dense `[1, z]` count row.
    pub fn to_dense(&self, z: usize) -> Tensor {
        let mut data = vec![0.0; z];
        for (&i, &c) in &self.counts {
            data[i] = c as f64;
        }
        Tensor::row(&data)
    }
}

/// Counts in-vocabulary words of `doc` after the same normalization used
/// to build `vocab`. Out-of-vocabulary words (stopwords included) vanish.
pub fn to_bow(doc: &Document, vocab: &Vocabulary) -> Result<BowVector, CorpusError> {
    let bow = BowVector::from_counts(normalize(&doc.text).filter_map(|w| vocab.id(&w)).map(|i| (i, 1)));
    if bow.is_empty() {
        return Err(CorpusError::EmptyBow {
            doc_id: doc.id.clone(),
        });
    }
    Ok(bow)
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;
    use crate::corpus::build_vocabulary;

    #[test]
    fn counts_in_vocabulary_words() {
        let train = [Document::new("t", 0, "a b a b")];
        let vocab = build_vocabulary(&train, 1, &HashSet::new()).unwrap();
        let bow = to_bow(&Document::new("x", 0, "A a b zzz"), &vocab).unwrap();
        let a = vocab.id("a").unwrap();
        let b = vocab.id("b").unwrap();
        assert_eq!(bow.counts().get(&a), Some(&2));
        assert_eq!(bow.counts().get(&b), Some(&1));
        assert_eq!(bow.total(), 3);
    }

    #[test]
    fn empty_documents_are_flagged() {
        let train = [Document::new("t", 0, "the cat")];
        let stop: HashSet<String> = ["the".to_string()].into();
        let vocab = build_vocabulary(&train, 1, &stop).unwrap();
        for text in ["the the", ""] {
            let err = to_bow(&Document::new("e", 0, text), &vocab).unwrap_err();
            assert!(matches!(err, CorpusError::EmptyBow { .. }));
        }
    }

    #[test]
    fn dense_view() {
        let bow = BowVector::from_counts([(2, 3), (0, 1), (2, 1)]);
        assert_eq!(bow.to_dense(4).data(), &[1.0, 0.0, 4.0, 0.0]);
        assert_eq!(bow.total(), 5);
    }
}
