use super::{CorpusError, TokenSequence, CLS_ID, PAD_ID};

pub const VALID_PARTITION_COUNTS: [usize; 4] = [1, 2, 4, 8];

/// A document's token stream split into inputs of exactly `x = max_len / p`
/// positions, each starting with `CLS`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionSet {
    pub p: usize,
    pub x: usize,
    pub partitions: Vec<TokenSequence>,
    pub doc_id: String,
    /// Content tokens the final window shares with the one before it.
    pub overlap: usize,
}

impl PartitionSet {
    /// Content tokens of each partition with `CLS`, padding and the final
    /// window's overlap removed; concatenated they give back the input.
    pub fn content(&self) -> Vec<usize> {
        let last = self.partitions.len().saturating_sub(1);
        let mut out = Vec::new();
        for (i, part) in self.partitions.iter().enumerate() {
            let skip = if i == last { self.overlap } else { 0 };
            out.extend(
                part.ids[1..]
                    .iter()
                    .copied()
                    .filter(|&t| t != PAD_ID)
                    .skip(skip),
            );
        }
        out
    }

    pub fn has_partial_final_window(&self) -> bool {
        self.overlap > 0
    }
}

/// Splits content tokens into consecutive windows of `x - 1` tokens. A
/// partial last window is replaced by the last `x - 1` content tokens so
/// it needs no padding; only a document shorter than one window is padded.
pub fn partition(
    seq: &TokenSequence,
    p: usize,
    max_len: usize,
    doc_id: &str,
) -> Result<PartitionSet, CorpusError> {
    if !VALID_PARTITION_COUNTS.contains(&p) || !max_len.is_multiple_of(p) || max_len / p < 2 {
        return Err(CorpusError::InvalidPartition { p, max_len });
    }
    let x = max_len / p;
    let window = x - 1;
    let content = &seq.ids[..seq.ids.len().min(max_len - 1)];
    let n = content.len();

    let make = |tokens: &[usize]| {
        let mut ids = Vec::with_capacity(x);
        ids.push(CLS_ID);
        ids.extend_from_slice(tokens);
        ids.resize(x, PAD_ID);
        TokenSequence::new(ids)
    };

    let mut partitions = Vec::new();
    let mut overlap = 0;
    if n <= window {
        partitions.push(make(content));
    } else {
        let count = n.div_ceil(window);
        for i in 0..count - 1 {
            partitions.push(make(&content[i * window..(i + 1) * window]));
        }
        let start = (count - 1) * window;
        if n - start == window {
            partitions.push(make(&content[start..]));
        } else {
            overlap = start - (n - window);
            partitions.push(make(&content[n - window..]));
        }
    }
    Ok(PartitionSet {
        p,
        x,
        partitions,
        doc_id: doc_id.to_string(),
        overlap,
    })
}
