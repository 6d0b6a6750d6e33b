use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{AlignedStopPolicy, Strategy, StrategyConfig};
use super::trace::{
    Counters, DecodeFailure, GenerationResult, GenerationTrace, PrefixTriple, Source, Termination,
    TraceStep,
};
use crate::classifier::{ClassifierMode, CriticalTokenClassifier, DecisionLabel};
use crate::dist::{argmax, entropy, mix, sample, MixtureWeights, TokenDistribution, TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{bridge_token, check_context, LanguageModel};

/// The models and router taking part in one generation. Which ones must be
/// present depends on the strategy.
#[derive(Clone, Copy, Default)]
pub struct Participants<'a> {
    pub aligned: Option<&'a dyn LanguageModel>,
    pub pretrained: Option<&'a dyn LanguageModel>,
    pub classifier: Option<&'a dyn CriticalTokenClassifier>,
}

/// Runs `config.strategy`. Single-model strategies start from
/// `prefixes.aligned` or `prefixes.pretrained`.
pub fn decode<'a>(
    participants: &Participants<'a>,
    prefixes: PrefixTriple,
    config: &StrategyConfig,
) -> Result<GenerationResult, DecodeFailure> {
    let need = |m: Option<&'a dyn LanguageModel>, role: &str| {
        m.ok_or_else(|| Error::invalid(format!("{} needs a {role} model", config.strategy)))
    };
    let aligned = || need(participants.aligned, "aligned");
    let pretrained = || need(participants.pretrained, "pretrained");
    let classifier = || {
        participants
            .classifier
            .ok_or_else(|| Error::invalid(format!("{} needs a classifier", config.strategy)))
    };
    match config.strategy {
        Strategy::AlignedSampling | Strategy::AlignedGreedy => {
            generate(aligned()?, &prefixes.aligned, config)
        }
        Strategy::PretrainedSampling | Strategy::PretrainedGreedy => {
            generate(pretrained()?, &prefixes.pretrained, config)
        }
        Strategy::SelfCds => self_cds(aligned()?, &prefixes.aligned, config),
        Strategy::EntropyCds => entropy_cds(pretrained()?, aligned()?, prefixes, config),
        Strategy::ModelCds => model_cds(pretrained()?, aligned()?, classifier()?, prefixes, config),
        Strategy::SoftMixingCds => {
            soft_mixing_cds(pretrained()?, aligned()?, classifier()?, prefixes, config)
        }
    }
}

/// Greedy or temperature sampling from one model.
pub fn generate<M: LanguageModel + ?Sized>(
    model: &M,
    prefix: &[TokenId],
    config: &StrategyConfig,
) -> Result<GenerationResult, DecodeFailure> {
    if !config.strategy.is_single_model() {
        return Err(Error::invalid(format!("{} is not a single-model strategy", config.strategy)).into());
    }
    let greedy = matches!(config.strategy, Strategy::AlignedGreedy | Strategy::PretrainedGreedy);
    let source = match config.strategy {
        Strategy::AlignedSampling | Strategy::AlignedGreedy => Source::Aligned,
        _ => Source::Pretrained,
    };
    single_model(model, prefix, config, |dist, _h, rng| {
        let w = if greedy { argmax(dist) } else { sample_at(dist, config.temperature, rng) };
        (w, DecisionLabel::No, source)
    })
}

/// Samples from the aligned model, switching to its argmax wherever the
/// next-token entropy exceeds `gamma`.
pub fn self_cds<M: LanguageModel + ?Sized>(
    aligned: &M,
    prefix: &[TokenId],
    config: &StrategyConfig,
) -> Result<GenerationResult, DecodeFailure> {
    if config.gamma.is_none() {
        return Err(Error::invalid("self-cds requires gamma").into());
    }
    let gamma = config.gamma_or_inf();
    single_model(aligned, prefix, config, |dist, h, rng| {
        if h > gamma {
            (argmax(dist), DecisionLabel::Yes, Source::Aligned)
        } else {
            (sample_at(dist, config.temperature, rng), DecisionLabel::No, Source::Aligned)
        }
    })
}

/// Algorithm 1: the aligned model proposes, the classifier routes critical
/// positions to the pretrained model's argmax.
pub fn model_cds<P, A, C>(
    pretrained: &P,
    aligned: &A,
    classifier: &C,
    prefixes: PrefixTriple,
    config: &StrategyConfig,
) -> Result<GenerationResult, DecodeFailure>
where
    P: LanguageModel + ?Sized,
    A: LanguageModel + ?Sized,
    C: CriticalTokenClassifier + ?Sized,
{
    let mut pair = Pair::new(pretrained, aligned, prefixes, config, false)?;
    let nt = classifier.mode() == ClassifierMode::Nt;
    pair.run(|p, counters| {
        if nt {
            counters.classifier_calls += 1;
            let decision = p.classify_current(classifier)?;
            if decision.is_yes() {
                let (w, wp) = p.pretrained_argmax(counters)?;
                return p.accept(w, Some(wp), decision, Source::Pretrained, None, None, counters);
            }
            let (dist, h) = p.aligned_distribution(counters)?;
            let w = sample_at(&dist, p.config.temperature, &mut p.rng);
            return p.accept(w, None, decision, Source::Aligned, Some(h), Some(w), counters);
        }
        let (dist, h) = p.aligned_distribution(counters)?;
        let wa = sample_at(&dist, p.config.temperature, &mut p.rng);
        if p.terminates_early(wa) {
            return p.accept(wa, None, DecisionLabel::No, Source::Aligned, Some(h), Some(wa), counters);
        }
        counters.classifier_calls += 1;
        let decision = p.classify_tentative(classifier, wa)?;
        if decision.is_yes() {
            let (w, wp) = p.pretrained_argmax(counters)?;
            p.accept(w, Some(wp), decision, Source::Pretrained, Some(h), Some(wa), counters)
        } else {
            p.accept(wa, None, decision, Source::Aligned, Some(h), Some(wa), counters)
        }
    })
}

/// Routes a position to the pretrained argmax when the aligned model's
/// next-token entropy exceeds `gamma`; samples from the aligned model
/// otherwise.
pub fn entropy_cds<P, A>(
    pretrained: &P,
    aligned: &A,
    prefixes: PrefixTriple,
    config: &StrategyConfig,
) -> Result<GenerationResult, DecodeFailure>
where
    P: LanguageModel + ?Sized,
    A: LanguageModel + ?Sized,
{
    if config.gamma.is_none() {
        return Err(Error::invalid("entropy-cds requires gamma").into());
    }
    let gamma = config.gamma_or_inf();
    let mut pair = Pair::new(pretrained, aligned, prefixes, config, false)?;
    pair.run(|p, counters| {
        let (dist, h) = p.aligned_distribution(counters)?;
        if h > gamma {
            let (w, wp) = p.pretrained_argmax(counters)?;
            p.accept(w, Some(wp), DecisionLabel::Yes, Source::Pretrained, Some(h), None, counters)
        } else {
            let w = sample_at(&dist, p.config.temperature, &mut p.rng);
            p.accept(w, None, DecisionLabel::No, Source::Aligned, Some(h), Some(w), counters)
        }
    })
}

/// Like Model CDS, but a critical position takes the argmax of
/// `lambda * p_pretrained + (1 - lambda) * p_aligned`. Both models must share
/// one vocabulary.
pub fn soft_mixing_cds<P, A, C>(
    pretrained: &P,
    aligned: &A,
    classifier: &C,
    prefixes: PrefixTriple,
    config: &StrategyConfig,
) -> Result<GenerationResult, DecodeFailure>
where
    P: LanguageModel + ?Sized,
    A: LanguageModel + ?Sized,
    C: CriticalTokenClassifier + ?Sized,
{
    let weights = MixtureWeights::pair(config.lambda_mix)?;
    let mut pair = Pair::new(pretrained, aligned, prefixes, config, true)?;
    let nt = classifier.mode() == ClassifierMode::Nt;
    pair.run(|p, counters| {
        let (dist, h) = p.aligned_distribution(counters)?;
        let (decision, proposed) = if nt {
            counters.classifier_calls += 1;
            let d = p.classify_current(classifier)?;
            if d.is_yes() {
                (d, None)
            } else {
                (d, Some(sample_at(&dist, p.config.temperature, &mut p.rng)))
            }
        } else {
            let wa = sample_at(&dist, p.config.temperature, &mut p.rng);
            if p.terminates_early(wa) {
                return p.accept(wa, None, DecisionLabel::No, Source::Aligned, Some(h), Some(wa), counters);
            }
            counters.classifier_calls += 1;
            (p.classify_tentative(classifier, wa)?, Some(wa))
        };
        match (decision, proposed) {
            (DecisionLabel::No, Some(wa)) => {
                p.accept(wa, None, decision, Source::Aligned, Some(h), Some(wa), counters)
            }
            _ => {
                let dp = p.query_pretrained(counters)?;
                let w = argmax(&mix(&[&dp, &dist], &weights)?);
                p.accept(w, None, decision, Source::Mixture, Some(h), proposed, counters)
            }
        }
    })
}

fn sample_at(dist: &TokenDistribution, temperature: f64, rng: &mut ChaCha8Rng) -> TokenId {
    if temperature == 1.0 {
        sample(dist, rng)
    } else {
        // a positive finite temperature over a valid distribution cannot fail
        let scaled = dist.with_temperature(temperature).unwrap_or_else(|_| dist.clone());
        sample(&scaled, rng)
    }
}

fn query<M: LanguageModel + ?Sized>(model: &M, context: &[TokenId]) -> Result<TokenDistribution> {
    let dist = model.next_distribution(context)?;
    let size = model.vocabulary().len();
    if dist.len() != size {
        return Err(Error::Protocol(format!(
            "distribution over {} tokens for a vocabulary of {size}",
            dist.len()
        )));
    }
    Ok(dist)
}

fn resolve_stops(config: &StrategyConfig, vocab: &Vocabulary) -> Result<BTreeSet<TokenId>> {
    let stops = config.stop_ids.clone().unwrap_or_else(|| vocab.stop_ids().clone());
    for &s in &stops {
        vocab.check(s)?;
    }
    Ok(stops)
}

/// The shared outer loop: one accepted token per step until STOP or the cap.
fn drive<F>(config: &StrategyConfig, stops: &BTreeSet<TokenId>, mut step: F) -> Result<GenerationResult, DecodeFailure>
where
    F: FnMut(usize, &mut Counters) -> Result<TraceStep>,
{
    let mut tokens = Vec::new();
    let mut trace = GenerationTrace::default();
    while tokens.len() < config.max_tokens {
        match step(tokens.len(), &mut trace.counters) {
            Ok(s) => {
                let w = s.accepted;
                tokens.push(w);
                trace.steps.push(s);
                if stops.contains(&w) {
                    return Ok(GenerationResult {
                        tokens,
                        trace,
                        terminated_by: Termination::StopToken,
                        prefixes: None,
                    });
                }
            }
            Err(error) => return Err(DecodeFailure { error, tokens, trace }),
        }
    }
    Ok(GenerationResult { tokens, trace, terminated_by: Termination::MaxTokens, prefixes: None })
}

fn single_model<M, F>(
    model: &M,
    prefix: &[TokenId],
    config: &StrategyConfig,
    mut choose: F,
) -> Result<GenerationResult, DecodeFailure>
where
    M: LanguageModel + ?Sized,
    F: FnMut(&TokenDistribution, f64, &mut ChaCha8Rng) -> (TokenId, DecisionLabel, Source),
{
    config.validate()?;
    let vocab = model.vocabulary();
    if vocab.is_empty() {
        return Err(Error::invalid("empty vocabulary").into());
    }
    check_context(vocab, prefix)?;
    let stops = resolve_stops(config, vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut context = prefix.to_vec();
    drive(config, &stops, |position, counters| {
        let dist = query(model, &context)?;
        let h = entropy(&dist);
        let (w, decision, source) = choose(&dist, h, &mut rng);
        if source == Source::Pretrained {
            counters.pretrained_calls += 1;
            counters.pretrained_tokens += 1;
        } else {
            counters.aligned_calls += 1;
            counters.aligned_tokens += 1;
        }
        context.push(w);
        let proposed = if decision.is_yes() { None } else { Some(w) };
        Ok(TraceStep { position, decision, source, entropy: Some(h), proposed, accepted: w })
    })
}

/// Bookkeeping shared by the two-model strategies.
struct Pair<'m, P: ?Sized, A: ?Sized> {
    pretrained: &'m P,
    aligned: &'m A,
    shared: bool,
    prefixes: PrefixTriple,
    config: &'m StrategyConfig,
    stops: BTreeSet<TokenId>,
    rng: ChaCha8Rng,
}

impl<'m, P, A> Pair<'m, P, A>
where
    P: LanguageModel + ?Sized,
    A: LanguageModel + ?Sized,
{
    fn new(
        pretrained: &'m P,
        aligned: &'m A,
        prefixes: PrefixTriple,
        config: &'m StrategyConfig,
        require_shared: bool,
    ) -> Result<Self> {
        config.validate()?;
        let (va, vp) = (aligned.vocabulary(), pretrained.vocabulary());
        if va.is_empty() || vp.is_empty() {
            return Err(Error::invalid("empty vocabulary"));
        }
        let shared = va == vp;
        if !shared && require_shared {
            return Err(Error::invalid(format!("{} needs models with one shared vocabulary", config.strategy)));
        }
        if !shared && !config.cross_vocab {
            return Err(Error::invalid("models have different vocabularies; enable cross_vocab to bridge them"));
        }
        check_context(va, &prefixes.aligned)?;
        check_context(vp, &prefixes.pretrained)?;
        Ok(Pair {
            pretrained,
            aligned,
            shared,
            prefixes,
            config,
            stops: resolve_stops(config, va)?,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        })
    }

    fn run<F>(&mut self, mut step: F) -> Result<GenerationResult, DecodeFailure>
    where
        F: FnMut(&mut Self, &mut Counters) -> Result<TraceStep>,
    {
        let stops = self.stops.clone();
        let config = self.config;
        let mut result = drive(config, &stops, |position, counters| {
            let mut s = step(self, counters)?;
            s.position = position;
            Ok(s)
        })?;
        result.prefixes = Some(core::mem::take(&mut self.prefixes));
        Ok(result)
    }

    fn terminates_early(&self, proposed: TokenId) -> bool {
        self.config.aligned_stop == AlignedStopPolicy::Terminate && self.stops.contains(&proposed)
    }

    fn token_string(&self, id: TokenId) -> String {
        self.aligned.vocabulary().token(id).unwrap_or_default().into()
    }

    fn aligned_distribution(&mut self, counters: &mut Counters) -> Result<(TokenDistribution, f64)> {
        counters.aligned_calls += 1;
        let dist = query(self.aligned, &self.prefixes.aligned)?;
        let h = entropy(&dist);
        Ok((dist, h))
    }

    fn query_pretrained(&mut self, counters: &mut Counters) -> Result<TokenDistribution> {
        counters.pretrained_calls += 1;
        query(self.pretrained, &self.prefixes.pretrained)
    }

    /// Pretrained argmax, as (aligned id, pretrained id).
    fn pretrained_argmax(&mut self, counters: &mut Counters) -> Result<(TokenId, TokenId)> {
        let wp = argmax(&self.query_pretrained(counters)?);
        if self.shared {
            return Ok((wp, wp));
        }
        match bridge_token(self.pretrained, self.aligned, wp)?.as_slice() {
            [w] => Ok((*w, wp)),
            _ => Err(Error::Bridge {
                token: self.pretrained.vocabulary().token(wp).unwrap_or_default().into(),
            }),
        }
    }

    /// CT protocol: `proposed` is appended to s^c for the decision only.
    fn classify_tentative<C>(&mut self, classifier: &C, proposed: TokenId) -> Result<DecisionLabel>
    where
        C: CriticalTokenClassifier + ?Sized,
    {
        let s = self.token_string(proposed);
        let ctx = &mut self.prefixes.classifier;
        ctx.response.push(s);
        let decision = classifier.decide(&ctx.question, &ctx.response);
        ctx.response.pop();
        decision
    }

    /// NT protocol: decide on the accepted response alone.
    fn classify_current<C>(&self, classifier: &C) -> Result<DecisionLabel>
    where
        C: CriticalTokenClassifier + ?Sized,
    {
        let ctx = &self.prefixes.classifier;
        classifier.decide(&ctx.question, &ctx.response)
    }

    /// Appends the accepted token to all three prefixes.
    #[allow(clippy::too_many_arguments)]
    fn accept(
        &mut self,
        w: TokenId,
        from_pretrained: Option<TokenId>,
        decision: DecisionLabel,
        source: Source,
        entropy: Option<f64>,
        proposed: Option<TokenId>,
        counters: &mut Counters,
    ) -> Result<TraceStep> {
        match (from_pretrained, self.shared) {
            (Some(wp), _) => self.prefixes.pretrained.push(wp),
            (None, true) => self.prefixes.pretrained.push(w),
            (None, false) => {
                let bridged = bridge_token(self.aligned, self.pretrained, w)?;
                self.prefixes.pretrained.extend(bridged);
            }
        }
        self.prefixes.aligned.push(w);
        let s = self.token_string(w);
        self.prefixes.classifier.response.push(s);
        match source {
            Source::Aligned => counters.aligned_tokens += 1,
            Source::Pretrained => counters.pretrained_tokens += 1,
            Source::Mixture => counters.mixture_tokens += 1,
        }
        Ok(TraceStep { position: 0, decision, source, entropy, proposed, accepted: w })
    }
}
