//! Corpus ingestion, vocabulary, sequence encoding, splitting and batching.
//!
//! Input is UTF-8 TSV, one `<label>\t<text>` example per line. An optional
//! sidecar `<stem>.classes` names the classes, one per line.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub const PAD: usize = 0;
pub const OOV: usize = 1;

/// Row-major matrix of token ids, `B x T`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenMatrix {
    n_rows: usize,
    n_cols: usize,
    ids: Vec<usize>,
}

impl TokenMatrix {
    pub fn from_rows(rows: Vec<Vec<usize>>) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::shape("TokenMatrix", "rows differ in length"));
        }
        Ok(TokenMatrix {
            n_rows: rows.len(),
            n_cols,
            ids: rows.into_iter().flatten().collect(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> usize {
        self.ids[r * self.n_cols + c]
    }

    pub fn row(&self, r: usize) -> &[usize] {
        &self.ids[r * self.n_cols..(r + 1) * self.n_cols]
    }

    /// Rows `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> TokenMatrix {
        let mut ids = Vec::with_capacity(idx.len() * self.n_cols);
        for &i in idx {
            ids.extend_from_slice(self.row(i));
        }
        TokenMatrix {
            n_rows: idx.len(),
            n_cols: self.n_cols,
            ids,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub label: usize,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub examples: Vec<Example>,
    pub class_names: Vec<String>,
}

impl Corpus {
    pub fn new(examples: Vec<Example>, class_names: Vec<String>) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if let Some(e) = examples.iter().find(|e| e.label >= class_names.len()) {
            return Err(Error::LabelOutOfRange {
                label: e.label,
                classes: class_names.len(),
            });
        }
        Ok(Corpus { examples, class_names })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Serializes to the TSV line format.
    pub fn to_tsv(&self) -> String {
        self.examples.iter().map(|e| format!("{}\t{}\n", e.label, e.text)).collect()
    }
}

/// Path of the class-name sidecar for a data file: `reviews.tsv` -> `reviews.classes`.
pub fn classes_path(data: &Path) -> PathBuf {
    data.with_extension("classes")
}

/// Parses TSV content. `origin` only labels error messages.
pub fn parse_corpus(content: &str, origin: &Path, class_names: Option<Vec<String>>) -> Result<Corpus> {
    let mut examples = Vec::new();
    for (n, line) in content.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line: line_no,
            msg,
        };
        let (label, text) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected <label><TAB><text>".into()))?;
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("label {label:?} is not a non-negative integer")))?;
        examples.push(Example {
            label,
            text: text.to_string(),
        });
    }
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let class_names = class_names.unwrap_or_else(|| {
        let max = examples.iter().map(|e| e.label).max().unwrap_or(0);
        (0..=max.max(1)).map(|k| k.to_string()).collect()
    });
    Corpus::new(examples, class_names)
}

/// Reads a TSV corpus and, when present, its `.classes` sidecar.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let sidecar = classes_path(path);
    let class_names = if sidecar.exists() {
        let names = fs::read_to_string(&sidecar).map_err(|e| Error::io(format!("reading {}", sidecar.display()), e))?;
        Some(names.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
    } else {
        None
    };
    parse_corpus(&content, path, class_names)
}

/// Lowercases, splits on whitespace and strips non-alphanumeric characters
/// from both ends of each token. Tokens that strip to nothing are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Word ids: 0 is padding, 1 is out-of-vocabulary, the rest by descending
/// frequency with lexicographic tie-break.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Rebuilds a vocabulary from its id-ordered word list (ids 2..).
    pub fn from_words(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(k, w)| (w.clone(), k + 2)).collect();
        Vocabulary { words, index }
    }

    /// Number of ids including PAD and OOV.
    pub fn len(&self) -> usize {
        self.words.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(OOV)
    }

    /// Words with ids 2.. in id order.
    pub fn words(&self) -> &[String] {
        &self.words
    }
}

pub fn build_vocab(corpus: &Corpus, capacity: usize) -> Result<Vocabulary> {
    if capacity < 3 {
        return Err(Error::Config(format!("vocabulary capacity must be >= 3, got {capacity}")));
    }
    let mut freq: HashMap<String, usize> = HashMap::new();
    for e in &corpus.examples {
        for w in tokenize(&e.text) {
            *freq.entry(w).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(capacity - 2);
    Ok(Vocabulary::from_words(ranked.into_iter().map(|(w, _)| w).collect()))
}

/// Maps `text` to exactly `seq_len` ids: keeps the last `seq_len` tokens,
/// left-pads shorter sequences with PAD.
pub fn encode(text: &str, vocab: &Vocabulary, seq_len: usize) -> Vec<usize> {
    let ids: Vec<usize> = tokenize(text).iter().map(|w| vocab.id(w)).collect();
    let kept = &ids[ids.len().saturating_sub(seq_len)..];
    let mut out = vec![PAD; seq_len - kept.len()];
    out.extend_from_slice(kept);
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedDataset {
    pub tokens: TokenMatrix,
    pub labels: Vec<usize>,
}

impl EncodedDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.tokens.n_cols()
    }

    pub fn select(&self, idx: &[usize]) -> EncodedDataset {
        EncodedDataset {
            tokens: self.tokens.select(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

pub fn encode_corpus(corpus: &Corpus, vocab: &Vocabulary, seq_len: usize) -> EncodedDataset {
    let rows = corpus.examples.iter().map(|e| encode(&e.text, vocab, seq_len)).collect();
    EncodedDataset {
        tokens: TokenMatrix::from_rows(rows).expect("fixed-length rows"),
        labels: corpus.examples.iter().map(|e| e.label).collect(),
    }
}

/// Shuffled split with `floor(ratio * N)` training examples.
pub fn split(corpus: &Corpus, ratio: f64, rng: &mut SeededRng) -> Result<(Corpus, Corpus)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    let mut idx: Vec<usize> = (0..corpus.len()).collect();
    idx.shuffle(rng);
    let n_train = (ratio * corpus.len() as f64).floor() as usize;
    let take = |ids: &[usize]| Corpus {
        examples: ids.iter().map(|&i| corpus.examples[i].clone()).collect(),
        class_names: corpus.class_names.clone(),
    };
    Ok((take(&idx[..n_train]), take(&idx[n_train..])))
}

/// Shuffled mini-batches; the final partial batch is kept.
pub fn batches(data: &EncodedDataset, batch_size: usize, rng: &mut SeededRng) -> Result<Vec<EncodedDataset>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(rng);
    Ok(idx.chunks(batch_size).map(|c| data.select(c)).collect())
}
