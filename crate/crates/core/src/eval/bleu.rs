use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Stand-in for a zero n-gram precision before the geometric mean.
pub const BLEU_FLOOR: f64 = 1e-9;

type Counts<'a> = BTreeMap<&'a [&'a str], usize>;

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> Counts<'a> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU-`n` of `hypothesis` against `references`, all
/// whitespace-tokenized: uniform weights over 1..=n-gram clipped precisions,
/// brevity penalty against the closest reference length (shorter wins
/// ties), zero precisions floored at [`BLEU_FLOOR`].
pub fn sentence_bleu(hypothesis: &str, references: &[&str], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("BLEU order must be positive"));
    }
    if references.is_empty() {
        return Err(Error::invalid("BLEU needs at least one reference"));
    }
    let hyp: Vec<&str> = hypothesis.split_whitespace().collect();
    let refs: Vec<Vec<&str>> = references.iter().map(|r| r.split_whitespace().collect()).collect();
    Ok(bleu_tokens(&hyp, &refs, n))
}

fn bleu_tokens(hyp: &[&str], refs: &[Vec<&str>], n: usize) -> f64 {
    if hyp.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for k in 1..=n {
        let h = ngram_counts(hyp, k);
        let ref_counts: Vec<Counts<'_>> = refs.iter().map(|r| ngram_counts(r, k)).collect();
        let total: usize = h.values().sum();
        let clipped: usize = h
            .iter()
            .map(|(g, &c)| {
                let max_ref = ref_counts.iter().map(|rc| rc.get(g).copied().unwrap_or(0)).max().unwrap_or(0);
                c.min(max_ref)
            })
            .sum();
        let p = if clipped == 0 { BLEU_FLOOR } else { clipped as f64 / total as f64 };
        log_sum += libm::log(p);
    }
    let c = hyp.len();
    let r = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(c), len))
        .unwrap_or(0);
    let bp = if c > r { 1.0 } else { libm::exp(1.0 - r as f64 / c as f64) };
    bp * libm::exp(log_sum / n as f64)
}

/// Mean BLEU-`n` of each sample against all the others. Higher means less
/// diverse.
pub fn self_bleu<S: AsRef<str>>(samples: &[S], n: usize) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::invalid("self-BLEU needs at least two samples"));
    }
    if n == 0 {
        return Err(Error::invalid("BLEU order must be positive"));
    }
    let tokenized: Vec<Vec<&str>> = samples.iter().map(|s| s.as_ref().split_whitespace().collect()).collect();
    let mut total = 0.0;
    for i in 0..tokenized.len() {
        let others: Vec<Vec<&str>> = tokenized
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, t)| t.clone())
            .collect();
        total += bleu_tokens(&tokenized[i], &others, n);
    }
    Ok(total / tokenized.len() as f64)
}
