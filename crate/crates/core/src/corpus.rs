//! Review/summary pairs: loading, length filtering, splitting, vocabulary
//! construction and encoding over a per-example extended vocabulary.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: missing field \"{field}\"")]
    MissingField { line: usize, field: &'static str },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("need at least 10 pairs to split, got {0}")]
    TooFewPairs(usize),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Lowercases and splits on whitespace, emitting every non-alphanumeric
/// character as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(ch.to_lowercase().collect());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewPair {
    pub review: Vec<String>,
    pub summary: Vec<String>,
}

impl ReviewPair {
    pub fn new(review: &str, summary: &str) -> Self {
        Self {
            review: tokenize(review),
            summary: tokenize(summary),
        }
    }
}

#[derive(Deserialize)]
struct RawRecord {
    review: Option<String>,
    summary: Option<String>,
}

/// Parses line-delimited JSON records with `review` and `summary` fields.
/// Blank lines are skipped.
pub fn parse_pairs(reader: impl BufRead) -> Result<Vec<ReviewPair>> {
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let review = raw.review.ok_or(CorpusError::MissingField {
            line: line_no,
            field: "review",
        })?;
        let summary = raw.summary.ok_or(CorpusError::MissingField {
            line: line_no,
            field: "summary",
        })?;
        pairs.push(ReviewPair::new(&review, &summary));
    }
    Ok(pairs)
}

pub fn load_pairs(path: &Path) -> Result<Vec<ReviewPair>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    parse_pairs(BufReader::new(file))
}

/// One JSON line per pair with tokens re-joined by single spaces.
pub fn pairs_to_jsonl(pairs: &[ReviewPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        let record = serde_json::json!({
            "review": p.review.join(" "),
            "summary": p.summary.join(" "),
        });
        out.push_str(&record.to_string());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterBounds {
    pub min_src: usize,
    pub max_src: usize,
    pub min_tgt: usize,
    pub max_tgt: usize,
}

impl Default for FilterBounds {
    fn default() -> Self {
        Self {
            min_src: 10,
            max_src: 200,
            min_tgt: 2,
            max_tgt: 20,
        }
    }
}

impl FilterBounds {
    pub fn validate(&self) -> Result<()> {
        if self.min_src == 0 || self.min_tgt == 0 || self.min_src > self.max_src || self.min_tgt > self.max_tgt
        {
            return Err(CorpusError::Config(format!(
                "filter bounds must satisfy 0 < min <= max, got source {}..={} target {}..={}",
                self.min_src, self.max_src, self.min_tgt, self.max_tgt
            )));
        }
        Ok(())
    }
}

pub fn filter_pairs(pairs: Vec<ReviewPair>, bounds: &FilterBounds) -> Result<Vec<ReviewPair>> {
    bounds.validate()?;
    Ok(pairs
        .into_iter()
        .filter(|p| {
            (bounds.min_src..=bounds.max_src).contains(&p.review.len())
                && (bounds.min_tgt..=bounds.max_tgt).contains(&p.summary.len())
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<ReviewPair>,
    pub dev: Vec<ReviewPair>,
    pub test: Vec<ReviewPair>,
}

/// Seeded shuffle, then `floor(0.7N)` train, `floor(0.1N)` dev, rest test.
pub fn split_dataset(pairs: Vec<ReviewPair>, seed: u64) -> Result<Split> {
    let n = pairs.len();
    if n < 10 {
        return Err(CorpusError::TooFewPairs(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut slots: Vec<Option<ReviewPair>> = pairs.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<ReviewPair> {
        idx.iter().map(|&i| slots[i].take().expect("index used once")).collect()
    };
    let (n_train, n_dev) = (n * 7 / 10, n / 10);
    let train = take(&order[..n_train]);
    let dev = take(&order[n_train..n_train + n_dev]);
    let test = take(&order[n_train + n_dev..]);
    Ok(Split { train, dev, test })
}

/// Word list with dense ids. Ids 0..4 are `<pad> <unk> <s> </s>`; the rest
/// are sorted by descending training frequency, then lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<usize>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_words(words: Vec<String>, counts: Vec<usize>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self {
            words,
            counts,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Training-set frequency; zero for reserved tokens and reloaded files.
    pub fn count(&self, id: usize) -> usize {
        self.counts.get(id).copied().unwrap_or(0)
    }

    /// One token per line, in id order.
    pub fn to_file_string(&self) -> String {
        let mut s = self.words.join("\n");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let words: Vec<String> = text.lines().map(str::to_owned).collect();
        if words.len() < RESERVED.len() || words[..4] != RESERVED {
            return Err(CorpusError::Malformed {
                line: 1,
                message: format!("vocabulary must start with {RESERVED:?}"),
            });
        }
        let mut seen = HashMap::new();
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(CorpusError::Malformed {
                    line: i + 1,
                    message: format!("invalid token {w:?}"),
                });
            }
            if seen.insert(w.as_str(), i).is_some() {
                return Err(CorpusError::Malformed {
                    line: i + 1,
                    message: format!("duplicate token {w:?}"),
                });
            }
        }
        let counts = vec![0; words.len()];
        Ok(Self::from_words(words, counts))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(io_err(path))?)
    }
}

/// Pools review and summary tokens of the training pairs and keeps the
/// `max_size - 4` most frequent alongside the reserved tokens.
pub fn build_vocab(train: &[ReviewPair], max_size: usize) -> Result<Vocabulary> {
    if max_size <= RESERVED.len() {
        return Err(CorpusError::Config(format!(
            "vocabulary size must exceed {}, got {max_size}",
            RESERVED.len()
        )));
    }
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for p in train {
        for t in p.review.iter().chain(&p.summary) {
            if !RESERVED.contains(&t.as_str()) {
                *freq.entry(t.as_str()).or_insert(0) += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size - RESERVED.len());

    let mut words: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    let mut counts = vec![0; RESERVED.len()];
    for (w, c) in ranked {
        words.push(w.to_owned());
        counts.push(c);
    }
    Ok(Vocabulary::from_words(words, counts))
}

/// A pair encoded over the extended vocabulary: ids `>= vocab.len()` name
/// out-of-vocabulary source words listed in `oov`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
    pub oov: Vec<String>,
}

impl EncodedPair {
    pub fn extended_size(&self, vocab_size: usize) -> usize {
        vocab_size + self.oov.len()
    }

    /// Surface form of an extended id, `None` if out of range.
    pub fn surface<'a>(&'a self, id: usize, vocab: &'a Vocabulary) -> Option<&'a str> {
        if id < vocab.len() {
            vocab.word(id)
        } else {
            self.oov.get(id - vocab.len()).map(String::as_str)
        }
    }

    /// Line format: space-separated source ids, a tab, space-separated target
    /// ids, a tab, space-separated OOV surface forms in extended-id order.
    pub fn to_line(&self) -> String {
        let join = |ids: &[usize]| ids.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        format!("{}\t{}\t{}", join(&self.source), join(&self.target), self.oov.join(" "))
    }

    pub fn from_line(line: &str, vocab_size: usize, line_no: usize) -> Result<Self> {
        let malformed = |message: String| CorpusError::Malformed {
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(malformed(format!("expected 3 tab-separated fields, got {}", fields.len())));
        }
        let ids = |s: &str| -> Result<Vec<usize>> {
            s.split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|e| malformed(format!("bad id {t:?}: {e}"))))
                .collect()
        };
        let pair = Self {
            source: ids(fields[0])?,
            target: ids(fields[1])?,
            oov: fields[2].split_whitespace().map(str::to_owned).collect(),
        };
        let limit = pair.extended_size(vocab_size);
        if pair.source.is_empty() || pair.target.is_empty() {
            return Err(malformed("empty source or target".into()));
        }
        if let Some(bad) = pair.source.iter().chain(&pair.target).find(|&&id| id >= limit) {
            return Err(malformed(format!("id {bad} exceeds extended vocabulary size {limit}")));
        }
        Ok(pair)
    }
}

pub fn parse_encoded(text: &str, vocab_size: usize) -> Result<Vec<EncodedPair>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| EncodedPair::from_line(l, vocab_size, i + 1))
        .collect()
}

/// Encodes a review with an optional reference summary.
pub fn encode_source(review: &[String], vocab: &Vocabulary) -> EncodedPair {
    let mut oov: Vec<String> = Vec::new();
    let source = review
        .iter()
        .map(|tok| match vocab.id(tok) {
            Some(id) => id,
            None => match oov.iter().position(|o| o == tok) {
                Some(k) => vocab.len() + k,
                None => {
                    oov.push(tok.clone());
                    vocab.len() + oov.len() - 1
                }
            },
        })
        .collect();
    EncodedPair {
        source,
        target: Vec::new(),
        oov,
    }
}

pub fn encode_pair(pair: &ReviewPair, vocab: &Vocabulary) -> EncodedPair {
    let mut enc = encode_source(&pair.review, vocab);
    enc.target = pair
        .summary
        .iter()
        .map(|tok| match vocab.id(tok) {
            Some(id) => id,
            None => enc
                .oov
                .iter()
                .position(|o| o == tok)
                .map_or(UNK, |k| vocab.len() + k),
        })
        .collect();
    enc
}
