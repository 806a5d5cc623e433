//! Dialogue evaluation metrics: corpus BLEU-1/2, DISTINCT-1/2 and token F1.
//!
//! BLEU here is the corpus-level, per-order variant: BLEU-2 is the clipped
//! bigram precision times the brevity penalty, not a geometric mean with the
//! unigram precision. Scores are comparable across runs of this crate, not
//! necessarily with numbers produced by other BLEU implementations.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Lowercases, splits on whitespace and strips leading/trailing
/// punctuation from each chunk. Chunks that end up empty are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|chunk| chunk.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|chunk| !chunk.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn ngrams(tokens: &[String], n: usize) -> impl Iterator<Item = &[String]> {
    // windows(0) panics; n is always >= 1 for callers
    tokens.windows(n.max(1))
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for gram in ngrams(tokens, n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Corpus BLEU of order `n` over `(candidate, reference)` pairs.
///
/// Clipped n-gram matches and candidate n-gram totals are summed over the
/// corpus before dividing. The brevity penalty is `exp(min(0, 1 - r/c))`
/// with `r` and `c` the total reference and candidate token counts.
/// A candidate shorter than `n` tokens contributes no n-grams.
pub fn bleu_n<C, R>(pairs: &[(C, R)], n: usize) -> f64
where
    C: AsRef<str>,
    R: AsRef<str>,
{
    assert!(n >= 1, "BLEU order must be at least 1");
    let mut matched = 0usize;
    let mut total = 0usize;
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;

    for (candidate, reference) in pairs {
        let cand = tokenize(candidate.as_ref());
        let refr = tokenize(reference.as_ref());
        cand_len += cand.len();
        ref_len += refr.len();

        let ref_counts = ngram_counts(&refr, n);
        for (gram, count) in ngram_counts(&cand, n) {
            matched += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            total += count;
        }
    }

    if total == 0 || cand_len == 0 {
        return 0.0;
    }
    let precision = matched as f64 / total as f64;
    let brevity = (1.0 - ref_len as f64 / cand_len as f64).min(0.0).exp();
    precision * brevity
}

/// Distinct n-grams across all candidates divided by the total number of
/// n-grams. N-grams never span two candidates. Zero total gives 0.0.
pub fn distinct_n<S: AsRef<str>>(candidates: &[S], n: usize) -> f64 {
    assert!(n >= 1, "DISTINCT order must be at least 1");
    let tokenized: Vec<Vec<String>> = candidates.iter().map(|c| tokenize(c.as_ref())).collect();
    let mut seen = std::collections::HashSet::new();
    let mut total = 0usize;
    for tokens in &tokenized {
        for gram in ngrams(tokens, n) {
            total += 1;
            seen.insert(gram);
        }
    }
    if total == 0 {
        0.0
    } else {
        seen.len() as f64 / total as f64
    }
}

/// Token F1 with multiset overlap. Both sides empty scores 1.0, exactly one
/// empty side scores 0.0.
pub fn f1(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    match (cand.is_empty(), refr.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let ref_counts = ngram_counts(&refr, 1);
    let overlap: usize = ngram_counts(&cand, 1)
        .into_iter()
        .map(|(gram, count)| count.min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    // harmonic mean of P = o/|c| and R = o/|r|, in the form 2o / (|c| + |r|)
    2.0 * overlap as f64 / (cand.len() + refr.len()) as f64
}

/// Scores for one evaluated run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub distinct1: f64,
    pub distinct2: f64,
    /// Mean per-pair token F1.
    pub f1: f64,
    pub count: usize,
}

impl MetricReport {
    /// Evaluates `(candidate, reference)` pairs. An empty input yields an
    /// all-zero report.
    pub fn evaluate<C, R>(pairs: &[(C, R)]) -> Self
    where
        C: AsRef<str>,
        R: AsRef<str>,
    {
        if pairs.is_empty() {
            return Self::default();
        }
        let candidates: Vec<&str> = pairs.iter().map(|(c, _)| c.as_ref()).collect();
        let f1_sum: f64 = pairs
            .iter()
            .map(|(c, r)| f1(c.as_ref(), r.as_ref()))
            .sum();
        Self {
            bleu1: bleu_n(pairs, 1),
            bleu2: bleu_n(pairs, 2),
            distinct1: distinct_n(&candidates, 1),
            distinct2: distinct_n(&candidates, 2),
            f1: f1_sum / pairs.len() as f64,
            count: pairs.len(),
        }
    }
}

impl std::fmt::Display for MetricReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "BLEU-1/2 {:.4} / {:.4}  DISTINCT-1/2 {:.4} / {:.4}  F1 {:.4}  (n={})",
            self.bleu1, self.bleu2, self.distinct1, self.distinct2, self.f1, self.count
        )
    }
}
