//! Generated corpora with known structure, for experiments and tests.

use super::Document;
use crate::numkernel::RngState;

/// Filler words per half in [`xor_markers`].
pub const XOR_FILLER_WORDS: usize = 40;
/// Content tokens per [`xor_markers`] document: two windows of 63, so a
/// 64-position partition (63 tokens + `CLS`) holds exactly one half.
pub const XOR_DOC_TOKENS: usize = 126;
const XOR_HALF: usize = XOR_DOC_TOKENS / 2;

/// Documents whose label is the XOR of two marker words, one hidden in each
/// half: the first half carries `alpha` or `beta`, the second `gamma` or
/// `delta`, and the label is `[beta] xor [delta]`. A reader that sees only
/// one half can do no better than chance.
pub fn xor_markers(n_docs: usize, seed: u64) -> Vec<Document> {
    let mut rng = RngState::new(seed);
    (0..n_docs)
        .map(|i| {
            let mut words: Vec<String> = (0..XOR_DOC_TOKENS)
                .map(|_| format!("w{:02}", rng.next_below(XOR_FILLER_WORDS)))
                .collect();
            let first = rng.next_below(2);
            let second = rng.next_below(2);
            words[rng.next_below(XOR_HALF)] = ["alpha", "beta"][first].to_string();
            words[XOR_HALF + rng.next_below(XOR_HALF)] = ["gamma", "delta"][second].to_string();
            Document::new(format!("xor{i:05}"), first ^ second, words.join(" "))
        })
        .collect()
}

/// Documents drawn from one of two disjoint word clusters (`a0..` or
/// `b0..`); the label is the cluster.
pub fn two_clusters(n_docs: usize, words_per_cluster: usize, doc_len: usize, seed: u64) -> Vec<Document> {
    let mut rng = RngState::new(seed);
    (0..n_docs)
        .map(|i| {
            let cluster = rng.next_below(2);
            let prefix = ["a", "b"][cluster];
            let text = (0..doc_len)
                .map(|_| format!("{prefix}{}", rng.next_below(words_per_cluster)))
                .collect::<Vec<_>>()
                .join(" ");
            Document::new(format!("c{i:05}"), cluster, text)
        })
        .collect()
}
