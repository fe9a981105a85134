use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use super::{normalize, CorpusError, Document};

/// Bijection between word ids `[0, Z)` and words, ordered by descending
/// training-split frequency with ties broken lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    id_of: HashMap<String, usize>,
    f_min: u64,
}

impl Vocabulary {
    fn from_counted(mut entries: Vec<(String, u64)>, f_min: u64) -> Self {
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let id_of = entries
            .iter()
            .enumerate()
            .map(|(i, (w, _))| (w.clone(), i))
            .collect();
        let (words, counts) = entries.into_iter().unzip();
        Self {
            words,
            counts,
            id_of,
            f_min,
        }
    }

    /// Counts normalized words of `docs` and keeps those seen at least
    /// `min_count` times. `exclude` words are never counted.
    pub(crate) fn count(docs: &[Document], min_count: u64, exclude: &HashSet<String>) -> Self {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for d in docs {
            for w in normalize(&d.text) {
                if !exclude.contains(&w) {
                    *counts.entry(w).or_default() += 1;
                }
            }
        }
        let kept = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        Self::from_counted(kept, min_count)
    }

    /// Vocabulary size `Z`.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn f_min(&self) -> u64 {
        self.f_min
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.id_of.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn count_of(&self, id: usize) -> u64 {
        self.counts[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Header `Z=<int> F_MIN=<int>` followed by `index<TAB>word<TAB>count`.
    pub fn to_file_string(&self) -> String {
        let mut out = format!("Z={} F_MIN={}\n", self.len(), self.f_min);
        for (i, (w, c)) in self.words.iter().zip(&self.counts).enumerate() {
            writeln!(out, "{i}\t{w}\t{c}").unwrap();
        }
        out
    }

    pub fn parse(content: &str, path: &Path) -> Result<Self, CorpusError> {
        let err = |line: usize, message: String| CorpusError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = content.lines();
        let header = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
        let mut z = None;
        let mut f_min = None;
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("Z", v)) => z = v.parse::<usize>().ok(),
                Some(("F_MIN", v)) => f_min = v.parse::<u64>().ok(),
                _ => return Err(err(1, format!("unexpected header field {field:?}"))),
            }
        }
        let (Some(z), Some(f_min)) = (z, f_min) else {
            return Err(err(1, "header must be `Z=<int> F_MIN=<int>`".into()));
        };
        let mut words = Vec::with_capacity(z);
        let mut counts = Vec::with_capacity(z);
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let parts: Vec<&str> = line.split('\t').collect();
            let [idx, word, count] = parts[..] else {
                return Err(err(lineno, "expected index<TAB>word<TAB>count".into()));
            };
            if idx.parse::<usize>().ok() != Some(i) {
                return Err(err(lineno, format!("index {idx:?} out of order")));
            }
            let count = count
                .parse::<u64>()
                .map_err(|e| err(lineno, format!("count {count:?}: {e}")))?;
            words.push(word.to_string());
            counts.push(count);
        }
        if words.len() != z {
            return Err(err(1, format!("header says Z={z} but {} entries follow", words.len())));
        }
        let id_of: HashMap<String, usize> =
            words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        if id_of.len() != words.len() {
            return Err(err(1, "duplicate word".into()));
        }
        Ok(Self {
            words,
            counts,
            id_of,
            f_min,
        })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_file_string())
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let content = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&content, path)
    }
}

/// Topic-model vocabulary from the training split: lowercase, drop
/// stopwords, keep words occurring at least `f_min` times.
pub fn build_vocabulary(
    train_docs: &[Document],
    f_min: u64,
    stopwords: &HashSet<String>,
) -> Result<Vocabulary, CorpusError> {
    let vocab = Vocabulary::count(train_docs, f_min.max(1), stopwords);
    if vocab.is_empty() {
        return Err(CorpusError::EmptyVocabulary { f_min });
    }
    Ok(vocab)
}
