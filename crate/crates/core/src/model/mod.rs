//! The language-model abstraction and the desk-scale implementations.
//!
//! A model maps a token context to a next-token distribution over its own
//! vocabulary. Local models tokenize by whitespace over a closed vocabulary;
//! remote models (in the `cds` crate) delegate tokenization to the server.

mod fewshot;
mod ngram;
mod table;

pub use fewshot::{render_fewshot_prefix, FewShotSpec, FewShotTemplate, MAX_SHOTS};
pub use ngram::{Gram, NGramModel};
pub use table::TableModel;

use alloc::boxed::Box;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::dist::{TokenDistribution, TokenId, Vocabulary};
use crate::error::{Error, Result};

/// Text to token conversion for one vocabulary.
pub trait Tokenizer {
    fn encode(&self, text: &str) -> Result<Vec<TokenId>>;
    fn decode(&self, tokens: &[TokenId]) -> String;
}

impl Tokenizer for Vocabulary {
    fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        self.encode_whitespace(text)
    }

    fn decode(&self, tokens: &[TokenId]) -> String {
        self.decode_whitespace(tokens)
    }
}

/// A next-token predictor.
///
/// Implementations must be deterministic: the same context yields the same
/// distribution, and that distribution covers [`vocabulary`](Self::vocabulary).
pub trait LanguageModel: Tokenizer {
    fn vocabulary(&self) -> &Vocabulary;

    fn next_distribution(&self, context: &[TokenId]) -> Result<TokenDistribution>;
}

macro_rules! forward_model {
    ($($ptr:ty),*) => {$(
        impl<M: LanguageModel + ?Sized> Tokenizer for $ptr {
            fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
                (**self).encode(text)
            }
            fn decode(&self, tokens: &[TokenId]) -> String {
                (**self).decode(tokens)
            }
        }

        impl<M: LanguageModel + ?Sized> LanguageModel for $ptr {
            fn vocabulary(&self) -> &Vocabulary {
                (**self).vocabulary()
            }
            fn next_distribution(&self, context: &[TokenId]) -> Result<TokenDistribution> {
                (**self).next_distribution(context)
            }
        }
    )*};
}

forward_model!(&M, Box<M>, Arc<M>);

pub(crate) fn check_context(vocab: &Vocabulary, context: &[TokenId]) -> Result<()> {
    context.iter().try_for_each(|&t| vocab.check(t).map(drop))
}

/// Moves one token from `from`'s vocabulary into `to`'s by detokenizing it to
/// its string and re-tokenizing. STOP tokens map to the target's
/// end-of-sequence token. Models sharing a vocabulary get the id back as is.
pub fn bridge_token<A, B>(from: &A, to: &B, id: TokenId) -> Result<Vec<TokenId>>
where
    A: LanguageModel + ?Sized,
    B: LanguageModel + ?Sized,
{
    let (src, dst) = (from.vocabulary(), to.vocabulary());
    if src == dst {
        return Ok(alloc::vec![id]);
    }
    if src.is_stop(id) {
        return Ok(alloc::vec![dst.eos()]);
    }
    let text = src.token(id).ok_or(Error::ForeignToken { id: id.0, size: src.len() })?;
    let bridged = to.encode(text).map_err(|_| Error::Bridge { token: text.into() })?;
    let lost = bridged.is_empty()
        || bridged
            .iter()
            .any(|t| dst.unk() == Some(*t) && dst.token(*t) != Some(text));
    if lost {
        return Err(Error::Bridge { token: text.into() });
    }
    Ok(bridged)
}
