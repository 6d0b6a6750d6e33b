use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{check_context, LanguageModel, Tokenizer};
use crate::dist::{TokenDistribution, TokenId, Vocabulary};
use crate::error::{Error, Result};

/// One position of an n-gram context: a token or begin-of-sequence padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gram {
    Bos,
    Token(TokenId),
}

/// Count-based n-gram model with additive smoothing.
///
/// `P(w | ctx) = (count(ctx, w) + alpha) / (count(ctx) + alpha * V)`. A
/// context never seen in training with `alpha = 0` has no mass to share and
/// yields the uniform distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    vocab: Vocabulary,
    order: usize,
    smoothing: f64,
    counts: BTreeMap<Vec<Gram>, BTreeMap<TokenId, u64>>,
}

impl NGramModel {
    /// Counts every `order`-length window of every sentence, left-padded with
    /// `order - 1` begin-of-sequence markers. Sentences are used as given, so
    /// include a STOP token in them if the model should learn to stop.
    pub fn train(
        vocab: Vocabulary,
        corpus: &[Vec<TokenId>],
        order: usize,
        smoothing: f64,
    ) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("n-gram order must be at least 1"));
        }
        if !(smoothing.is_finite() && smoothing >= 0.0) {
            return Err(Error::invalid(format!("invalid smoothing constant {smoothing}")));
        }
        if corpus.is_empty() {
            return Err(Error::invalid("empty training corpus"));
        }
        let mut counts: BTreeMap<Vec<Gram>, BTreeMap<TokenId, u64>> = BTreeMap::new();
        for sentence in corpus {
            check_context(&vocab, sentence)?;
            let mut history: Vec<Gram> = alloc::vec![Gram::Bos; order - 1];
            for &tok in sentence {
                let ctx = history[history.len() - (order - 1)..].to_vec();
                *counts.entry(ctx).or_default().entry(tok).or_insert(0) += 1;
                history.push(Gram::Token(tok));
            }
        }
        Ok(NGramModel { vocab, order, smoothing, counts })
    }

    /// Rebuilds a model from stored counts.
    pub fn from_counts(
        vocab: Vocabulary,
        order: usize,
        smoothing: f64,
        counts: BTreeMap<Vec<Gram>, BTreeMap<TokenId, u64>>,
    ) -> Result<Self> {
        if order == 0 || !(smoothing.is_finite() && smoothing >= 0.0) {
            return Err(Error::invalid("invalid n-gram order or smoothing"));
        }
        for (ctx, row) in &counts {
            if ctx.len() != order - 1 {
                return Err(Error::invalid("n-gram context of the wrong length"));
            }
            for g in ctx {
                if let Gram::Token(t) = g {
                    vocab.check(*t)?;
                }
            }
            for t in row.keys() {
                vocab.check(*t)?;
            }
        }
        Ok(NGramModel { vocab, order, smoothing, counts })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn counts(&self) -> &BTreeMap<Vec<Gram>, BTreeMap<TokenId, u64>> {
        &self.counts
    }

    fn context_key(&self, context: &[TokenId]) -> Vec<Gram> {
        let want = self.order - 1;
        let have = context.len().min(want);
        let mut key = alloc::vec![Gram::Bos; want - have];
        key.extend(context[context.len() - have..].iter().map(|&t| Gram::Token(t)));
        key
    }
}

impl Tokenizer for NGramModel {
    fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        self.vocab.encode_whitespace(text)
    }

    fn decode(&self, tokens: &[TokenId]) -> String {
        self.vocab.decode_whitespace(tokens)
    }
}

impl LanguageModel for NGramModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<TokenDistribution> {
        check_context(&self.vocab, context)?;
        let size = self.vocab.len();
        let key = self.context_key(context);
        let row = self.counts.get(&key);
        let total: u64 = row.map(|r| r.values().sum()).unwrap_or(0);
        let denom = total as f64 + self.smoothing * size as f64;
        if denom == 0.0 {
            return TokenDistribution::uniform(size);
        }
        let mut probs = alloc::vec![self.smoothing / denom; size];
        if let Some(row) = row {
            for (t, &c) in row {
                probs[t.index()] = (c as f64 + self.smoothing) / denom;
            }
        }
        TokenDistribution::new(probs).or_else(|_| {
            // accumulated rounding on large vocabularies
            let mut w = alloc::vec![self.smoothing; size];
            if let Some(row) = row {
                for (t, &c) in row {
                    w[t.index()] += c as f64;
                }
            }
            TokenDistribution::from_weights(w)
        })
    }
}
