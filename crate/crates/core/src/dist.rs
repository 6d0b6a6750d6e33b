//! Vocabularies, next-token distributions and the probability algebra shared
//! by every decoding strategy.
//!
//! Probabilities are kept in linear space as `f64`. Entropy is in nats.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance of the sum-to-one invariant.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Index of a token inside a [`Vocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for TokenId {
    fn from(i: usize) -> Self {
        TokenId(i as u32)
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
    stop_ids: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    unk_id: Option<u32>,
}

/// An ordered, closed set of token strings with a designated STOP set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, TokenId>,
    stop: BTreeSet<TokenId>,
    unk: Option<TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary. `stop_tokens` must be non-empty and every entry
    /// must be one of `tokens`.
    pub fn new<S: Into<String>>(
        tokens: impl IntoIterator<Item = S>,
        stop_tokens: &[&str],
    ) -> Result<Self> {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let index = Self::build_index(&tokens)?;
        let mut stop = BTreeSet::new();
        for s in stop_tokens {
            let id = index
                .get(*s)
                .copied()
                .ok_or_else(|| Error::invalid(format!("stop token {s:?} not in vocabulary")))?;
            stop.insert(id);
        }
        Self::from_parts(tokens, index, stop, None)
    }

    /// Builds a vocabulary from raw ids, as found in files and on the wire.
    pub fn from_ids(tokens: Vec<String>, stop_ids: &[u32], unk_id: Option<u32>) -> Result<Self> {
        let index = Self::build_index(&tokens)?;
        let stop = stop_ids.iter().map(|&i| TokenId(i)).collect();
        Self::from_parts(tokens, index, stop, unk_id.map(TokenId))
    }

    fn build_index(tokens: &[String]) -> Result<BTreeMap<String, TokenId>> {
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), TokenId::from(i)).is_some() {
                return Err(Error::invalid(format!("duplicate token {t:?}")));
            }
        }
        Ok(index)
    }

    fn from_parts(
        tokens: Vec<String>,
        index: BTreeMap<String, TokenId>,
        stop: BTreeSet<TokenId>,
        unk: Option<TokenId>,
    ) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::invalid("empty vocabulary"));
        }
        if stop.is_empty() {
            return Err(Error::invalid("vocabulary needs at least one STOP token"));
        }
        let size = tokens.len();
        if let Some(bad) = stop.iter().chain(unk.iter()).find(|id| id.index() >= size) {
            return Err(Error::ForeignToken { id: bad.0, size });
        }
        Ok(Vocabulary { tokens, index, stop, unk })
    }

    /// Marks `token` as the replacement for out-of-vocabulary words.
    pub fn with_unk(mut self, token: &str) -> Result<Self> {
        let id = self
            .id(token)
            .ok_or_else(|| Error::invalid(format!("unk token {token:?} not in vocabulary")))?;
        self.unk = Some(id);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id.index()).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn stop_ids(&self) -> &BTreeSet<TokenId> {
        &self.stop
    }

    pub fn is_stop(&self, id: TokenId) -> bool {
        self.stop.contains(&id)
    }

    /// The lowest STOP id, used as end-of-sequence.
    pub fn eos(&self) -> TokenId {
        *self.stop.iter().next().expect("validated non-empty")
    }

    pub fn unk(&self) -> Option<TokenId> {
        self.unk
    }

    pub fn contains(&self, id: TokenId) -> bool {
        id.index() < self.tokens.len()
    }

    pub fn check(&self, id: TokenId) -> Result<TokenId> {
        if self.contains(id) {
            Ok(id)
        } else {
            Err(Error::ForeignToken { id: id.0, size: self.len() })
        }
    }

    /// Splits on whitespace and maps each word to its id, falling back to the
    /// unk token when one is configured.
    pub fn encode_whitespace(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace()
            .map(|w| {
                self.id(w)
                    .or(self.unk)
                    .ok_or_else(|| Error::invalid(format!("word {w:?} is not in the vocabulary")))
            })
            .collect()
    }

    /// Inverse of [`encode_whitespace`](Self::encode_whitespace): token strings
    /// joined by single spaces.
    pub fn decode_whitespace(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for (i, id) in ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.token(*id).unwrap_or("<?>"));
        }
        out
    }
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = Error;

    fn try_from(r: VocabularyRepr) -> Result<Self> {
        Vocabulary::from_ids(r.tokens, &r.stop_ids, r.unk_id)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            stop_ids: v.stop.iter().map(|t| t.0).collect(),
            unk_id: v.unk.map(|t| t.0),
            tokens: v.tokens,
        }
    }
}

/// A probability vector over a vocabulary.
///
/// Every entry is finite and non-negative and the entries sum to one within
/// [`SUM_TOLERANCE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TokenDistribution {
    probs: Vec<f64>,
}

impl TokenDistribution {
    /// Wraps an already-normalized vector, validating the invariants.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("empty distribution"));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::invalid(format!("invalid probability {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::invalid(format!("probabilities sum to {total}")));
        }
        Ok(TokenDistribution { probs })
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::invalid(format!("invalid weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("weights have no mass"));
        }
        Ok(TokenDistribution { probs: weights.into_iter().map(|w| w / total).collect() })
    }

    pub fn one_hot(size: usize, id: TokenId) -> Result<Self> {
        if id.index() >= size {
            return Err(Error::ForeignToken { id: id.0, size });
        }
        let mut probs = alloc::vec![0.0; size];
        probs[id.index()] = 1.0;
        Ok(TokenDistribution { probs })
    }

    pub fn uniform(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::invalid("empty distribution"));
        }
        Ok(TokenDistribution { probs: alloc::vec![1.0 / size as f64; size] })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        self.probs.get(id.index()).copied().unwrap_or(0.0)
    }

    /// Re-shapes the distribution as `p^(1/T)` renormalized. `T = 1` returns
    /// an identical copy.
    pub fn with_temperature(&self, temperature: f64) -> Result<Self> {
        check_temperature(temperature)?;
        if temperature == 1.0 {
            return Ok(self.clone());
        }
        let logits: Vec<f64> = self
            .probs
            .iter()
            .map(|&p| if p > 0.0 { libm::log(p) } else { f64::NEG_INFINITY })
            .collect();
        softmax_masked(&logits, temperature)
    }
}

impl TryFrom<Vec<f64>> for TokenDistribution {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        TokenDistribution::new(v)
    }
}

impl From<TokenDistribution> for Vec<f64> {
    fn from(d: TokenDistribution) -> Self {
        d.probs
    }
}

/// Normalized per-model weights of a mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights(Vec<f64>);

impl MixtureWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("no mixture weights"));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::invalid(format!("invalid mixture weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::invalid(format!("mixture weights sum to {total}")));
        }
        Ok(MixtureWeights(weights))
    }

    /// Two-model weights `[lambda, 1 - lambda]`.
    pub fn pair(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::invalid(format!("mixing ratio {lambda} outside [0, 1]")));
        }
        Self::new(alloc::vec![lambda, 1.0 - lambda])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn check_temperature(temperature: f64) -> Result<()> {
    if temperature.is_finite() && temperature > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("temperature must be positive, got {temperature}")))
    }
}

/// `exp(logit / T)` normalized. Logits must be finite.
pub fn softmax_with_temperature(logits: &[f64], temperature: f64) -> Result<TokenDistribution> {
    check_temperature(temperature)?;
    if logits.is_empty() {
        return Err(Error::invalid("empty logits"));
    }
    if let Some(l) = logits.iter().find(|l| !l.is_finite()) {
        return Err(Error::invalid(format!("non-finite logit {l}")));
    }
    softmax_masked(logits, temperature)
}

// -inf logits are allowed here and map to zero probability.
fn softmax_masked(logits: &[f64], temperature: f64) -> Result<TokenDistribution> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::invalid("all logits are -inf"));
    }
    let weights: Vec<f64> = logits
        .iter()
        .map(|&l| libm::exp((l - max) / temperature))
        .collect();
    TokenDistribution::from_weights(weights)
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(dist: &TokenDistribution) -> f64 {
    let h: f64 = dist
        .probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * libm::log(p))
        .sum();
    h.max(0.0)
}

/// Pointwise weighted sum of distributions over one vocabulary.
pub fn mix(dists: &[&TokenDistribution], weights: &MixtureWeights) -> Result<TokenDistribution> {
    let w = weights.as_slice();
    if dists.len() != w.len() {
        return Err(Error::invalid(format!(
            "{} distributions but {} weights",
            dists.len(),
            w.len()
        )));
    }
    let size = dists[0].len();
    if dists.iter().any(|d| d.len() != size) {
        return Err(Error::invalid("distributions cover different vocabularies"));
    }
    let mut out = alloc::vec![0.0; size];
    for (d, &lambda) in dists.iter().zip(w) {
        if lambda == 0.0 {
            continue;
        }
        for (o, &p) in out.iter_mut().zip(&d.probs) {
            *o += lambda * p;
        }
    }
    let total: f64 = out.iter().sum();
    if (total - 1.0).abs() <= SUM_TOLERANCE {
        Ok(TokenDistribution { probs: out })
    } else {
        TokenDistribution::from_weights(out)
    }
}

/// Draws one token. Consumes exactly one `f64` from `rng`.
pub fn sample<R: Rng + ?Sized>(dist: &TokenDistribution, rng: &mut R) -> TokenId {
    let u: f64 = rng.gen();
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, &p) in dist.probs.iter().enumerate() {
        if p > 0.0 {
            cumulative += p;
            last_positive = i;
            if u < cumulative {
                return TokenId::from(i);
            }
        }
    }
    // u landed in the rounding gap above the cumulative sum
    TokenId::from(last_positive)
}

/// Highest-probability token; ties go to the lowest id.
pub fn argmax(dist: &TokenDistribution) -> TokenId {
    let mut best = 0;
    for (i, &p) in dist.probs.iter().enumerate().skip(1) {
        if p > dist.probs[best] {
            best = i;
        }
    }
    TokenId::from(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_uniform_and_ln2() {
        let d = softmax_with_temperature(&[0.0, 0.0, 0.0], 1.0).unwrap();
        for p in d.probs() {
            assert!(close(*p, 1.0 / 3.0, 1e-15));
        }
        let d = softmax_with_temperature(&[libm::log(2.0), 0.0], 1.0).unwrap();
        assert!(close(d.probs()[0], 2.0 / 3.0, 1e-15));
        assert!(close(d.probs()[1], 1.0 / 3.0, 1e-15));
    }

    #[test]
    fn softmax_pinned_half_temperature() {
        // exp(l / 0.5) normalized, evaluated directly in double precision
        let expected = [0.9909411833267632, 0.0009036213940009269, 0.008155195279235843];
        let d = softmax_with_temperature(&[3.1, -0.4, 0.7], 0.5).unwrap();
        for (p, e) in d.probs().iter().zip(expected) {
            assert!(close(*p, e, 1e-12), "{p} vs {e}");
        }
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(softmax_with_temperature(&[1.0], 0.0).is_err());
        assert!(softmax_with_temperature(&[1.0], -1.0).is_err());
        assert!(softmax_with_temperature(&[f64::NAN, 1.0], 1.0).is_err());
        assert!(softmax_with_temperature(&[f64::INFINITY], 1.0).is_err());
    }

    #[test]
    fn entropy_examples() {
        let one_hot = TokenDistribution::one_hot(5, TokenId(2)).unwrap();
        assert_eq!(entropy(&one_hot), 0.0);
        let u = TokenDistribution::uniform(8).unwrap();
        assert!(close(entropy(&u), libm::log(8.0), 1e-12));
        assert!(close(entropy(&u), 2.0794, 1e-4));
        let d = TokenDistribution::new(vec![0.5, 0.25, 0.25]).unwrap();
        assert!(close(entropy(&d), 1.0397207708399179, 1e-12));
    }

    #[test]
    fn mix_examples() {
        let a = TokenDistribution::new(vec![1.0, 0.0]).unwrap();
        let b = TokenDistribution::new(vec![0.0, 1.0]).unwrap();
        let m = mix(&[&a, &b], &MixtureWeights::new(vec![1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(m, a);
        let m = mix(&[&a, &b], &MixtureWeights::pair(0.5).unwrap()).unwrap();
        assert_eq!(m.probs(), &[0.5, 0.5]);

        let p = TokenDistribution::new(vec![0.1, 0.6, 0.3]).unwrap();
        let q = TokenDistribution::new(vec![0.5, 0.2, 0.3]).unwrap();
        let m = mix(&[&p, &q], &MixtureWeights::pair(0.5).unwrap()).unwrap();
        for (x, e) in m.probs().iter().zip([0.3, 0.4, 0.3]) {
            assert!(close(*x, e, 1e-15));
        }
    }

    #[test]
    fn mix_length_mismatch() {
        let a = TokenDistribution::uniform(2).unwrap();
        assert!(mix(&[&a], &MixtureWeights::pair(0.5).unwrap()).is_err());
        let b = TokenDistribution::uniform(3).unwrap();
        assert!(mix(&[&a, &b], &MixtureWeights::pair(0.5).unwrap()).is_err());
        assert!(MixtureWeights::new(vec![0.3, 0.3]).is_err());
    }

    #[test]
    fn sample_one_hot_and_determinism() {
        let d = TokenDistribution::one_hot(6, TokenId(4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(sample(&d, &mut rng), TokenId(4));
        }
        let d = TokenDistribution::new(vec![0.2, 0.3, 0.5]).unwrap();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| sample(&d, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn sample_uniform_frequencies() {
        let d = TokenDistribution::uniform(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[sample(&d, &mut rng).index()] += 1;
        }
        for c in counts {
            assert!(close(c as f64 / n as f64, 0.25, 0.01), "{counts:?}");
        }
    }

    #[test]
    fn sample_chi_square() {
        // chi-square critical value for 7 dof at alpha = 0.001 is 24.322
        let d = TokenDistribution::new(vec![0.05, 0.1, 0.15, 0.2, 0.1, 0.3, 0.07, 0.03]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mut counts = [0usize; 8];
        for _ in 0..n {
            counts[sample(&d, &mut rng).index()] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(d.probs())
            .map(|(&c, &p)| {
                let e = p * n as f64;
                (c as f64 - e) * (c as f64 - e) / e
            })
            .sum();
        assert!(chi2 < 24.322, "chi2 = {chi2}");
    }

    #[test]
    fn argmax_examples() {
        let d = TokenDistribution::new(vec![0.1, 0.7, 0.2]).unwrap();
        assert_eq!(argmax(&d), TokenId(1));
        let d = TokenDistribution::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(argmax(&d), TokenId(0));
    }

    #[test]
    fn vocabulary_validation() {
        assert!(Vocabulary::new(["a", "a", "</s>"], &["</s>"]).is_err());
        assert!(Vocabulary::new(["a", "b"], &["</s>"]).is_err());
        assert!(Vocabulary::new(["a", "b"], &[]).is_err());
        let v = Vocabulary::new(["</s>", "a", "b"], &["</s>"]).unwrap();
        assert_eq!(v.eos(), TokenId(0));
        assert_eq!(v.encode_whitespace(" a  b ").unwrap(), vec![TokenId(1), TokenId(2)]);
        assert!(v.encode_whitespace("c").is_err());
        let v = Vocabulary::new(["</s>", "<unk>", "a"], &["</s>"]).unwrap().with_unk("<unk>").unwrap();
        assert_eq!(v.encode_whitespace("a c").unwrap(), vec![TokenId(2), TokenId(1)]);
        assert_eq!(v.decode_whitespace(&[TokenId(2), TokenId(0)]), "a </s>");
    }

    fn dist_strategy(max_len: usize) -> impl Strategy<Value = TokenDistribution> {
        prop::collection::vec(0.0f64..1.0, 1..max_len).prop_filter_map("no mass", |w| {
            TokenDistribution::from_weights(w).ok()
        })
    }

    proptest! {
        #[test]
        fn prop_argmax_is_linear_scan(d in dist_strategy(32)) {
            let mut best = 0;
            for i in 0..d.len() {
                if d.probs()[i] > d.probs()[best] { best = i; }
            }
            prop_assert_eq!(argmax(&d), TokenId::from(best));
        }

        #[test]
        fn prop_softmax_preserves_argmax(
            logits in prop::collection::vec(-20.0f64..20.0, 1..32),
            t in 0.05f64..10.0,
        ) {
            let a = softmax_with_temperature(&logits, t).unwrap();
            let b = softmax_with_temperature(&logits, 1.0).unwrap();
            prop_assert_eq!(argmax(&a), argmax(&b));
            let total: f64 = a.probs().iter().sum();
            prop_assert!((total - 1.0).abs() <= SUM_TOLERANCE);
        }

        #[test]
        fn prop_mix_identical_is_noop(d in dist_strategy(16), lambda in 0.0f64..=1.0) {
            let m = mix(&[&d, &d], &MixtureWeights::pair(lambda).unwrap()).unwrap();
            prop_assert!((entropy(&m) - entropy(&d)).abs() < 1e-9);
        }

        #[test]
        fn prop_mix_one_hot_weights_identity(a in dist_strategy(16), seed in 0u64..1000) {
            let b = TokenDistribution::uniform(a.len()).unwrap();
            let w = if seed % 2 == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] };
            let m = mix(&[&a, &b], &MixtureWeights::new(w).unwrap()).unwrap();
            let expected = if seed % 2 == 0 { &a } else { &b };
            prop_assert_eq!(&m, expected);
        }

        #[test]
        fn prop_entropy_bounds(d in dist_strategy(32)) {
            let h = entropy(&d);
            prop_assert!(h >= 0.0);
            prop_assert!(h <= libm::log(d.len() as f64) + 1e-9);
        }

        #[test]
        fn prop_temperature_keeps_invariants(d in dist_strategy(16), t in 0.1f64..5.0) {
            let s = d.with_temperature(t).unwrap();
            let total: f64 = s.probs().iter().sum();
            prop_assert!((total - 1.0).abs() <= SUM_TOLERANCE);
            prop_assert_eq!(argmax(&s), argmax(&d));
        }
    }
}
