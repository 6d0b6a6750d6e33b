//! JSON-over-HTTP client for served models and classifiers.
//!
//! Endpoints:
//!
//! - `GET /v1/vocab` returns `{"tokens": [...], "stop_ids": [...]}`, or
//!   `{"vocab_less": true}` for servers whose tokenizer cannot be enumerated.
//! - `POST /v1/distribution` takes `{"context_tokens": [...], "top_k": k}` (or
//!   `"context_text"` in vocab-less mode) and returns the top-k entries as
//!   `{"token", "logprob"}` plus a `residual_logprob` for everything else.
//! - `POST /v1/tokenize` maps `{"text"}` to `{"tokens": [...]}`.
//! - `POST /v1/classify` maps `{"prefix"}` to `{"label": "Yes" | "No"}`.
//! - `GET /v1/health` returns `{"status": "ok", "model": ...}`.

use std::collections::BTreeSet;
use std::thread;
use std::time::Duration;

use cds_core::classifier::build_classifier_prefix;
use cds_core::model::Tokenizer;
use cds_core::{
    ClassifierMode, CriticalTokenClassifier, DecisionLabel, Error, LanguageModel, Result,
    TokenDistribution, TokenId, Vocabulary,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const DEFAULT_TOP_K: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub url: String,
    pub top_k: usize,
    /// Extra attempts after the first failed one.
    pub retries: u32,
    pub timeout_secs: f64,
    pub detokenize: Detokenize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            url: String::new(),
            top_k: DEFAULT_TOP_K,
            retries: 2,
            timeout_secs: 30.0,
            detokenize: Detokenize::Whitespace,
        }
    }
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        EndpointConfig { url: url.into(), ..Default::default() }
    }
}

/// How token strings from the server are joined back into text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Detokenize {
    /// Join with single spaces (whitespace-tokenized models).
    #[default]
    Whitespace,
    /// Concatenate subword pieces, turning the `▁`/`Ġ` word markers into
    /// spaces and `Ċ` into newlines.
    Pieces,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VocabResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_ids: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unk_id: Option<u32>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub vocab_less: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_tokens: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_text: Option<String>,
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireEntry {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionResponse {
    pub entries: Vec<WireEntry>,
    /// Log of the mass outside `entries`; `null` when there is none.
    pub residual_logprob: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizeRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizeResponse {
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyRequest {
    pub prefix: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    #[serde(default)]
    pub model: String,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
}

/// Builds a distribution over `vocab` from a top-k wire response.
///
/// Listed tokens get `exp(logprob)`; the residual mass is spread evenly over
/// the unlisted ones and the result is renormalized. Unknown or duplicated
/// tokens are protocol errors when `strict`; otherwise unknown entries are
/// folded into the residual.
pub fn wire_to_distribution(
    resp: &DistributionResponse,
    vocab: &Vocabulary,
    strict: bool,
) -> Result<TokenDistribution> {
    let mut probs = vec![0.0; vocab.len()];
    let mut listed = BTreeSet::new();
    let mut residual = match resp.residual_logprob {
        Some(lp) if lp.is_nan() || lp > 1e-9 => {
            return Err(Error::Protocol(format!("invalid residual log-probability {lp}")))
        }
        Some(lp) => lp.exp(),
        None => 0.0,
    };
    for e in &resp.entries {
        if e.logprob.is_nan() || e.logprob > 1e-9 {
            return Err(Error::Protocol(format!("invalid log-probability {} for {:?}", e.logprob, e.token)));
        }
        match vocab.id(&e.token) {
            Some(id) => {
                if !listed.insert(id) {
                    return Err(Error::Protocol(format!("token {:?} listed twice", e.token)));
                }
                probs[id.index()] = e.logprob.exp();
            }
            None if strict => {
                return Err(Error::Protocol(format!("token {:?} is not in the negotiated vocabulary", e.token)))
            }
            None => residual += e.logprob.exp(),
        }
    }
    let unlisted = vocab.len() - listed.len();
    if unlisted > 0 && residual > 0.0 {
        let share = residual / unlisted as f64;
        for (i, p) in probs.iter_mut().enumerate() {
            if !listed.contains(&TokenId::from(i)) {
                *p = share;
            }
        }
    }
    if !(probs.iter().sum::<f64>() > 0.0) {
        return Err(Error::Protocol("distribution has no mass".into()));
    }
    TokenDistribution::from_weights(probs)
}

/// Joins subword pieces per [`Detokenize::Pieces`].
pub fn join_pieces<S: AsRef<str>>(pieces: &[S]) -> String {
    let mut out = String::new();
    for p in pieces {
        for c in p.as_ref().chars() {
            out.push(match c {
                '\u{2581}' | '\u{120}' => ' ',
                '\u{10a}' => '\n',
                c => c,
            });
        }
    }
    out.strip_prefix(' ').map(str::to_string).unwrap_or(out)
}

#[derive(Debug, Clone)]
struct Http {
    agent: ureq::Agent,
    base: String,
    retries: u32,
}

enum Failure {
    Retry(String),
    Fatal(Error),
}

impl Http {
    fn new(cfg: &EndpointConfig) -> Result<Self> {
        if cfg.url.is_empty() {
            return Err(Error::InvalidArgument("endpoint url is empty".into()));
        }
        if !(cfg.timeout_secs.is_finite() && cfg.timeout_secs > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid timeout {}", cfg.timeout_secs)));
        }
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .build();
        Ok(Http {
            agent: config.into(),
            base: cfg.url.trim_end_matches('/').to_string(),
            retries: cfg.retries,
        })
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        self.exchange(path, None)
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let body = serde_json::to_string(body).map_err(|e| Error::Protocol(e.to_string()))?;
        self.exchange(path, Some(&body))
    }

    fn exchange<T: DeserializeOwned>(&self, path: &str, body: Option<&str>) -> Result<T> {
        let url = format!("{}{}", self.base, path);
        let attempts = self.retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.once(&url, body) {
                Ok(text) => {
                    return serde_json::from_str(&text)
                        .map_err(|e| Error::Protocol(format!("{path}: malformed response: {e}")))
                }
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(msg)) => {
                    log::debug!("{url}: attempt {attempt}/{attempts} failed: {msg}");
                    last = msg;
                    if attempt < attempts {
                        thread::sleep(Duration::from_millis(25 * u64::from(attempt)));
                    }
                }
            }
        }
        Err(Error::Transport { attempts, message: format!("{url}: {last}") })
    }

    fn once(&self, url: &str, body: Option<&str>) -> std::result::Result<String, Failure> {
        let sent = match body {
            Some(b) => self
                .agent
                .post(url)
                .header("content-type", "application/json")
                .send(b.as_bytes()),
            None => self.agent.get(url).call(),
        };
        let mut resp = sent.map_err(|e| Failure::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Retry(e.to_string()))?;
        match status {
            200..=299 => Ok(text),
            500..=599 => Err(Failure::Retry(format!("HTTP {status}: {}", error_message(&text)))),
            _ => Err(Failure::Fatal(Error::Protocol(format!("HTTP {status}: {}", error_message(&text))))),
        }
    }
}

fn error_message(body: &str) -> String {
    serde_json::from_str::<ErrorBody>(body)
        .map(|b| b.error)
        .unwrap_or_else(|_| body.chars().take(200).collect())
}

/// A language model behind the HTTP protocol.
#[derive(Debug, Clone)]
pub struct RemoteModel {
    http: Http,
    vocab: Vocabulary,
    /// Vocabulary supplied by the caller; contexts travel as text.
    vocab_less: bool,
    top_k: usize,
    detokenize: Detokenize,
}

impl RemoteModel {
    /// Connects and negotiates the vocabulary with `GET /v1/vocab`.
    pub fn connect(cfg: &EndpointConfig) -> Result<Self> {
        let http = Http::new(cfg)?;
        let v: VocabResponse = http.get("/v1/vocab")?;
        if v.vocab_less {
            return Err(Error::InvalidArgument(format!(
                "{} does not publish a vocabulary; supply one for vocab-less mode",
                cfg.url
            )));
        }
        let (Some(tokens), Some(stop_ids)) = (v.tokens, v.stop_ids) else {
            return Err(Error::Protocol("vocabulary response lacks tokens or stop_ids".into()));
        };
        let vocab = Vocabulary::from_ids(tokens, &stop_ids, v.unk_id)
            .map_err(|e| Error::Protocol(format!("bad vocabulary: {e}")))?;
        Ok(Self::build(http, vocab, false, cfg))
    }

    /// Vocab-less mode: contexts are sent as detokenized text and returned
    /// entries are resolved against `vocab`, with unknown ones counted as
    /// residual mass.
    pub fn with_vocabulary(cfg: &EndpointConfig, vocab: Vocabulary) -> Result<Self> {
        Ok(Self::build(Http::new(cfg)?, vocab, true, cfg))
    }

    fn build(http: Http, vocab: Vocabulary, vocab_less: bool, cfg: &EndpointConfig) -> Self {
        RemoteModel { http, vocab, vocab_less, top_k: cfg.top_k, detokenize: cfg.detokenize }
    }

    pub fn health(&self) -> Result<HealthResponse> {
        self.http.get("/v1/health")
    }

    pub fn is_vocab_less(&self) -> bool {
        self.vocab_less
    }

    fn strings(&self, ids: &[TokenId]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&t| {
                self.vocab
                    .token(t)
                    .map(str::to_string)
                    .ok_or(Error::ForeignToken { id: t.0, size: self.vocab.len() })
            })
            .collect()
    }
}

impl Tokenizer for RemoteModel {
    fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        let resp: TokenizeResponse = self.http.post("/v1/tokenize", &TokenizeRequest { text: text.into() })?;
        resp.tokens
            .iter()
            .map(|t| {
                self.vocab
                    .id(t)
                    .or(self.vocab.unk())
                    .ok_or_else(|| Error::Protocol(format!("tokenizer produced unknown token {t:?}")))
            })
            .collect()
    }

    fn decode(&self, tokens: &[TokenId]) -> String {
        match self.detokenize {
            Detokenize::Whitespace => self.vocab.decode_whitespace(tokens),
            Detokenize::Pieces => {
                let pieces: Vec<&str> = tokens.iter().filter_map(|&t| self.vocab.token(t)).collect();
                join_pieces(&pieces)
            }
        }
    }
}

impl LanguageModel for RemoteModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<TokenDistribution> {
        let strings = self.strings(context)?;
        let req = if self.vocab_less {
            DistributionRequest { context_tokens: None, context_text: Some(self.decode(context)), top_k: self.top_k }
        } else {
            DistributionRequest { context_tokens: Some(strings), context_text: None, top_k: self.top_k }
        };
        let resp: DistributionResponse = self.http.post("/v1/distribution", &req)?;
        wire_to_distribution(&resp, &self.vocab, !self.vocab_less)
    }
}

/// A critical-token classifier behind `POST /v1/classify`.
#[derive(Debug, Clone)]
pub struct RemoteClassifier {
    http: Http,
    mode: ClassifierMode,
}

impl RemoteClassifier {
    pub fn new(cfg: &EndpointConfig, mode: ClassifierMode) -> Result<Self> {
        Ok(RemoteClassifier { http: Http::new(cfg)?, mode })
    }
}

impl CriticalTokenClassifier for RemoteClassifier {
    fn mode(&self) -> ClassifierMode {
        self.mode
    }

    fn decide(&self, question: &str, response: &[String]) -> Result<DecisionLabel> {
        let prefix = build_classifier_prefix(question, response);
        let resp: ClassifyResponse = self.http.post("/v1/classify", &ClassifyRequest { prefix })?;
        match resp.label.as_str() {
            "Yes" => Ok(DecisionLabel::Yes),
            "No" => Ok(DecisionLabel::No),
            other => Err(Error::Protocol(format!("classifier label {other:?} is neither Yes nor No"))),
        }
    }
}
