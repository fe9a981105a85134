use std::fmt::Write as _;

use super::{NvdmParams, TopicState};
use crate::corpus::Vocabulary;

pub const TOPIC_REPORT_TERMS: usize = 10;

/// Indices of the `m` largest entries of decoder row `k`, descending, ties
/// by smaller index.
pub fn top_word_ids(params: &NvdmParams, k: usize, m: usize) -> Vec<(usize, f64)> {
    let z = params.config().vocab_size;
    let row = &params.dec_u.data()[k * z..(k + 1) * z];
    let mut ids: Vec<usize> = (0..z).collect();
    ids.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    ids.into_iter().take(m).map(|i| (i, row[i])).collect()
}

/// The `m` words with the largest decoder weight in topic `k`.
///
/// # Panics
/// If `k` is not a topic index or the vocabulary is smaller than the
/// decoder.
pub fn topic_terms(params: &NvdmParams, vocab: &Vocabulary, k: usize, m: usize) -> Vec<(String, f64)> {
    assert!(k < params.config().topics, "topic {k} out of range");
    top_word_ids(params, k, m)
        .into_iter()
        .map(|(i, w)| (vocab.word(i).expect("vocabulary matches decoder").to_string(), w))
        .collect()
}

/// Index of the largest `h_tm` entry; the first one on ties.
pub fn dominant_topic(state: &TopicState) -> usize {
    argmax(&state.h_tm)
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// One line per topic: `topic <k>: w1 w2 ... w10`.
pub fn topic_report(params: &NvdmParams, vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for k in 0..params.config().topics {
        let words: Vec<String> = topic_terms(params, vocab, k, TOPIC_REPORT_TERMS.min(vocab.len()))
            .into_iter()
            .map(|(w, _)| w)
            .collect();
        writeln!(out, "topic {k}: {}", words.join(" ")).unwrap();
    }
    out
}
