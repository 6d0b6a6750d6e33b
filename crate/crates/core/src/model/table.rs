use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{check_context, LanguageModel, Tokenizer};
use crate::dist::{TokenDistribution, TokenId, Vocabulary};
use crate::error::{Error, Result};

/// A lookup-table model: distributions keyed by context suffixes.
///
/// A query uses the longest stored suffix of the context, falling back to the
/// default distribution when nothing matches.
#[derive(Debug, Clone, PartialEq)]
pub struct TableModel {
    vocab: Vocabulary,
    entries: BTreeMap<Vec<TokenId>, TokenDistribution>,
    default: TokenDistribution,
    max_suffix: usize,
}

impl TableModel {
    pub fn new(vocab: Vocabulary, default: TokenDistribution) -> Result<Self> {
        if default.len() != vocab.len() {
            return Err(Error::invalid(format!(
                "default distribution has {} entries for a vocabulary of {}",
                default.len(),
                vocab.len()
            )));
        }
        Ok(TableModel { vocab, entries: BTreeMap::new(), default, max_suffix: 0 })
    }

    /// Stores `dist` for contexts ending in `suffix`, replacing any previous
    /// entry.
    pub fn insert(&mut self, suffix: Vec<TokenId>, dist: TokenDistribution) -> Result<()> {
        check_context(&self.vocab, &suffix)?;
        if dist.len() != self.vocab.len() {
            return Err(Error::invalid(format!(
                "distribution has {} entries for a vocabulary of {}",
                dist.len(),
                self.vocab.len()
            )));
        }
        self.max_suffix = self.max_suffix.max(suffix.len());
        self.entries.insert(suffix, dist);
        Ok(())
    }

    /// Whitespace-tokenized convenience form of [`insert`](Self::insert) with
    /// a sparse `(token, weight)` list that is normalized.
    pub fn insert_text(&mut self, suffix: &str, weights: &[(&str, f64)]) -> Result<()> {
        let suffix = self.vocab.encode_whitespace(suffix)?;
        let dist = self.sparse(weights)?;
        self.insert(suffix, dist)
    }

    /// Makes the model answer `response` deterministically after any context
    /// ending in `prompt_suffix`: one one-hot entry per response position,
    /// keyed by the suffix plus the response so far.
    pub fn script(&mut self, prompt_suffix: &[TokenId], response: &[TokenId]) -> Result<()> {
        let mut key = prompt_suffix.to_vec();
        for &t in response {
            let dist = TokenDistribution::one_hot(self.vocab.len(), t)?;
            self.insert(key.clone(), dist)?;
            key.push(t);
        }
        Ok(())
    }

    pub fn sparse(&self, weights: &[(&str, f64)]) -> Result<TokenDistribution> {
        let mut w = alloc::vec![0.0; self.vocab.len()];
        for (tok, p) in weights {
            let id = self
                .vocab
                .id(tok)
                .ok_or_else(|| Error::invalid(format!("token {tok:?} not in vocabulary")))?;
            w[id.index()] += p;
        }
        TokenDistribution::from_weights(w)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&[TokenId], &TokenDistribution)> {
        self.entries.iter().map(|(k, v)| (k.as_slice(), v))
    }

    pub fn default_distribution(&self) -> &TokenDistribution {
        &self.default
    }

    fn lookup(&self, context: &[TokenId]) -> &TokenDistribution {
        let longest = self.max_suffix.min(context.len());
        (0..=longest)
            .rev()
            .find_map(|len| self.entries.get(&context[context.len() - len..]))
            .unwrap_or(&self.default)
    }
}

impl Tokenizer for TableModel {
    fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        self.vocab.encode_whitespace(text)
    }

    fn decode(&self, tokens: &[TokenId]) -> String {
        self.vocab.decode_whitespace(tokens)
    }
}

impl LanguageModel for TableModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<TokenDistribution> {
        check_context(&self.vocab, context)?;
        Ok(self.lookup(context).clone())
    }
}
