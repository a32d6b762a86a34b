//! ROUGE-1, ROUGE-2 and ROUGE-L scoring.
//!
//! Tokens are compared after lowercasing; no stemming or stopword removal.
//! Corpus scores are unweighted means of the per-pair scores.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("cannot average ROUGE over an empty pair list")]
    Empty,
    #[error("n-gram order must be at least 1")]
    ZeroOrder,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub fn from_precision_recall(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

fn lowered<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    tokens.iter().map(|t| t.as_ref().to_lowercase()).collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap.
pub fn rouge_n<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> Result<RougeScore, EvalError> {
    if n == 0 {
        return Err(EvalError::ZeroOrder);
    }
    let (cand, refr) = (lowered(candidate), lowered(reference));
    let cand_counts = ngram_counts(&cand, n);
    let ref_counts = ngram_counts(&refr, n);
    let cand_total: usize = cand_counts.values().sum();
    let ref_total: usize = ref_counts.values().sum();
    if cand_total == 0 || ref_total == 0 {
        return Ok(RougeScore::default());
    }
    let overlap: usize = ref_counts
        .iter()
        .map(|(gram, &rc)| rc.min(cand_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    Ok(RougeScore::from_precision_recall(
        overlap as f64 / cand_total as f64,
        overlap as f64 / ref_total as f64,
    ))
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> RougeScore {
    if candidate.is_empty() || reference.is_empty() {
        return RougeScore::default();
    }
    let (cand, refr) = (lowered(candidate), lowered(reference));
    let l = lcs_len(&cand, &refr) as f64;
    RougeScore::from_precision_recall(l / cand.len() as f64, l / refr.len() as f64)
}

/// Mean ROUGE-1, ROUGE-2 and ROUGE-L over a corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CorpusRouge {
    pub rouge_1: RougeScore,
    pub rouge_2: RougeScore,
    pub rouge_l: RougeScore,
}

impl CorpusRouge {
    pub fn rows(&self) -> [(&'static str, RougeScore); 3] {
        [
            ("ROUGE-1", self.rouge_1),
            ("ROUGE-2", self.rouge_2),
            ("ROUGE-L", self.rouge_l),
        ]
    }
}

/// Tab-separated `metric, precision, recall, f1` lines.
impl fmt::Display for CorpusRouge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "metric\tprecision\trecall\tf1")?;
        for (name, s) in self.rows() {
            writeln!(f, "{name}\t{:.6}\t{:.6}\t{:.6}", s.precision, s.recall, s.f1)?;
        }
        Ok(())
    }
}

pub fn corpus_rouge<S: AsRef<str>>(pairs: &[(Vec<S>, Vec<S>)]) -> Result<CorpusRouge, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut sums = [[0.0f64; 3]; 3];
    for (cand, refr) in pairs {
        let scores = [rouge_n(cand, refr, 1)?, rouge_n(cand, refr, 2)?, rouge_l(cand, refr)];
        for (acc, s) in sums.iter_mut().zip(scores) {
            acc[0] += s.precision;
            acc[1] += s.recall;
            acc[2] += s.f1;
        }
    }
    let n = pairs.len() as f64;
    let mean = |acc: [f64; 3]| RougeScore {
        precision: acc[0] / n,
        recall: acc[1] / n,
        f1: acc[2] / n,
    };
    Ok(CorpusRouge {
        rouge_1: mean(sums[0]),
        rouge_2: mean(sums[1]),
        rouge_l: mean(sums[2]),
    })
}
