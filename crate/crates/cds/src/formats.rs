//! On-disk formats: model and classifier files, JSONL datasets, traces.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::Path;

use cds_core::classifier::{FeatureClassifier, HeuristicClassifier, RuleSet};
use cds_core::decoding::{CostReport, GenerationResult, Source, Termination};
use cds_core::eval::QARecord;
use cds_core::model::{Gram, NGramModel, TableModel, Tokenizer};
use cds_core::{
    ClassifierMode, CriticalTokenClassifier, CriticalTokenInstance, DecisionLabel, Error,
    LanguageModel, Result, Strategy, TokenDistribution, TokenId, Vocabulary,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CdsError, CdsResult};

pub const MODEL_FORMAT: &str = "cds-model/1";
pub const CLASSIFIER_FORMAT: &str = "cds-classifier/1";

/// A model loaded from a `cds-model/1` file.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalModel {
    Table(TableModel),
    NGram(NGramModel),
}

impl Tokenizer for LocalModel {
    fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        self.vocabulary().encode_whitespace(text)
    }

    fn decode(&self, tokens: &[TokenId]) -> String {
        self.vocabulary().decode_whitespace(tokens)
    }
}

impl LanguageModel for LocalModel {
    fn vocabulary(&self) -> &Vocabulary {
        match self {
            LocalModel::Table(m) => m.vocabulary(),
            LocalModel::NGram(m) => m.vocabulary(),
        }
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<TokenDistribution> {
        match self {
            LocalModel::Table(m) => m.next_distribution(context),
            LocalModel::NGram(m) => m.next_distribution(context),
        }
    }
}

impl From<TableModel> for LocalModel {
    fn from(m: TableModel) -> Self {
        LocalModel::Table(m)
    }
}

impl From<NGramModel> for LocalModel {
    fn from(m: NGramModel) -> Self {
        LocalModel::NGram(m)
    }
}

/// A distribution in a model file: a dense probability array, or a sparse
/// `{token: weight}` map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum DistSpec {
    Dense(Vec<f64>),
    Sparse(BTreeMap<String, f64>),
}

#[derive(Debug, Serialize, Deserialize)]
struct TableEntry {
    suffix: Vec<String>,
    dist: DistSpec,
}

#[derive(Debug, Serialize, Deserialize)]
struct CountRow {
    /// `null` stands for begin-of-sequence padding.
    context: Vec<Option<String>>,
    next: BTreeMap<String, u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ModelBody {
    Table {
        vocab: Vocabulary,
        default: DistSpec,
        entries: Vec<TableEntry>,
    },
    Ngram {
        vocab: Vocabulary,
        order: usize,
        smoothing: f64,
        counts: Vec<CountRow>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    #[serde(flatten)]
    body: ModelBody,
}

fn lookup(vocab: &Vocabulary, token: &str) -> Result<TokenId> {
    vocab
        .id(token)
        .ok_or_else(|| Error::InvalidArgument(format!("token {token:?} not in vocabulary")))
}

fn dist_from_spec(vocab: &Vocabulary, spec: DistSpec) -> Result<TokenDistribution> {
    let weights = match spec {
        DistSpec::Dense(v) => v,
        DistSpec::Sparse(m) => {
            let mut v = vec![0.0; vocab.len()];
            for (tok, w) in m {
                v[lookup(vocab, &tok)?.index()] = w;
            }
            v
        }
    };
    if weights.len() != vocab.len() {
        return Err(Error::InvalidArgument(format!(
            "distribution has {} entries for a vocabulary of {}",
            weights.len(),
            vocab.len()
        )));
    }
    // exact probabilities load as is, anything else is treated as weights
    TokenDistribution::new(weights.clone()).or_else(|_| TokenDistribution::from_weights(weights))
}

fn dist_to_spec(vocab: &Vocabulary, dist: &TokenDistribution) -> DistSpec {
    DistSpec::Sparse(
        dist.probs()
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, &p)| (vocab.tokens()[i].clone(), p))
            .collect(),
    )
}

fn strings(vocab: &Vocabulary, ids: &[TokenId]) -> Vec<String> {
    ids.iter().map(|&t| vocab.tokens()[t.index()].clone()).collect()
}

impl LocalModel {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("model file: {e}")))?;
        if file.format != MODEL_FORMAT {
            return Err(Error::InvalidArgument(format!(
                "unsupported model format {:?}, expected {MODEL_FORMAT:?}",
                file.format
            )));
        }
        match file.body {
            ModelBody::Table { vocab, default, entries } => {
                let default = dist_from_spec(&vocab, default)?;
                let mut model = TableModel::new(vocab, default)?;
                for e in entries {
                    let suffix = e
                        .suffix
                        .iter()
                        .map(|t| lookup(model.vocabulary(), t))
                        .collect::<Result<Vec<_>>>()?;
                    let dist = dist_from_spec(model.vocabulary(), e.dist)?;
                    model.insert(suffix, dist)?;
                }
                Ok(LocalModel::Table(model))
            }
            ModelBody::Ngram { vocab, order, smoothing, counts } => {
                let mut table = BTreeMap::new();
                for row in counts {
                    let ctx = row
                        .context
                        .iter()
                        .map(|g| match g {
                            None => Ok(Gram::Bos),
                            Some(t) => lookup(&vocab, t).map(Gram::Token),
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let next = row
                        .next
                        .iter()
                        .map(|(t, &c)| lookup(&vocab, t).map(|id| (id, c)))
                        .collect::<Result<BTreeMap<_, _>>>()?;
                    table.insert(ctx, next);
                }
                Ok(LocalModel::NGram(NGramModel::from_counts(vocab, order, smoothing, table)?))
            }
        }
    }

    pub fn to_json(&self) -> String {
        let body = match self {
            LocalModel::Table(m) => {
                let vocab = m.vocabulary();
                ModelBody::Table {
                    vocab: vocab.clone(),
                    default: dist_to_spec(vocab, m.default_distribution()),
                    entries: m
                        .entries()
                        .map(|(suffix, dist)| TableEntry {
                            suffix: strings(vocab, suffix),
                            dist: dist_to_spec(vocab, dist),
                        })
                        .collect(),
                }
            }
            LocalModel::NGram(m) => {
                let vocab = m.vocabulary();
                ModelBody::Ngram {
                    vocab: vocab.clone(),
                    order: m.order(),
                    smoothing: m.smoothing(),
                    counts: m
                        .counts()
                        .iter()
                        .map(|(ctx, next)| CountRow {
                            context: ctx
                                .iter()
                                .map(|g| match g {
                                    Gram::Bos => None,
                                    Gram::Token(t) => Some(vocab.tokens()[t.index()].clone()),
                                })
                                .collect(),
                            next: next.iter().map(|(t, &c)| (vocab.tokens()[t.index()].clone(), c)).collect(),
                        })
                        .collect(),
                }
            }
        };
        let file = ModelFile { format: MODEL_FORMAT.into(), body };
        serde_json::to_string_pretty(&file).expect("model file serializes")
    }

    pub fn load(path: &Path) -> CdsResult<Self> {
        let text = read_to_string(path)?;
        Self::from_json(&text).map_err(|e| CdsError::parse(path, 0, e))
    }

    pub fn save(&self, path: &Path) -> CdsResult<()> {
        write_string(path, &self.to_json())
    }
}

/// A classifier loaded from a `cds-classifier/1` file.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalClassifier {
    Feature(FeatureClassifier),
    Heuristic(HeuristicClassifier),
}

impl CriticalTokenClassifier for LocalClassifier {
    fn mode(&self) -> ClassifierMode {
        match self {
            LocalClassifier::Feature(c) => c.mode(),
            LocalClassifier::Heuristic(c) => c.mode(),
        }
    }

    fn decide(&self, question: &str, response: &[String]) -> Result<DecisionLabel> {
        match self {
            LocalClassifier::Feature(c) => c.decide(question, response),
            LocalClassifier::Heuristic(c) => c.decide(question, response),
        }
    }

    fn label_sequence(&self, question: &str, tokens: &[String]) -> Result<Vec<DecisionLabel>> {
        match self {
            LocalClassifier::Feature(c) => c.label_sequence(question, tokens),
            LocalClassifier::Heuristic(c) => c.label_sequence(question, tokens),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ClassifierBody {
    Feature { model: FeatureClassifier },
    Heuristic { rules: RuleSet },
}

#[derive(Debug, Serialize, Deserialize)]
struct ClassifierFile {
    format: String,
    /// Classification protocol, readable without decoding the model.
    mode: ClassifierMode,
    #[serde(flatten)]
    body: ClassifierBody,
}

impl LocalClassifier {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ClassifierFile = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("classifier file: {e}")))?;
        if file.format != CLASSIFIER_FORMAT {
            return Err(Error::InvalidArgument(format!(
                "unsupported classifier format {:?}, expected {CLASSIFIER_FORMAT:?}",
                file.format
            )));
        }
        let c = match file.body {
            ClassifierBody::Feature { model } => LocalClassifier::Feature(model),
            ClassifierBody::Heuristic { rules } => LocalClassifier::Heuristic(HeuristicClassifier::new(rules)),
        };
        if c.mode() != file.mode {
            return Err(Error::InvalidArgument(format!(
                "classifier header says {:?} but the model is {:?}",
                file.mode,
                c.mode()
            )));
        }
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        let body = match self {
            LocalClassifier::Feature(m) => ClassifierBody::Feature { model: m.clone() },
            LocalClassifier::Heuristic(h) => ClassifierBody::Heuristic { rules: h.rules.clone() },
        };
        let file = ClassifierFile { format: CLASSIFIER_FORMAT.into(), mode: self.mode(), body };
        serde_json::to_string_pretty(&file).expect("classifier file serializes")
    }

    pub fn load(path: &Path) -> CdsResult<Self> {
        let text = read_to_string(path)?;
        Self::from_json(&text).map_err(|e| CdsError::parse(path, 0, e))
    }

    pub fn save(&self, path: &Path) -> CdsResult<()> {
        write_string(path, &self.to_json())
    }
}

pub fn read_to_string(path: &Path) -> CdsResult<String> {
    fs::read_to_string(path).map_err(|source| CdsError::Read { path: path.into(), source })
}

pub fn write_string(path: &Path, text: &str) -> CdsResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CdsError::Write { path: dir.into(), source })?;
    }
    fs::write(path, text).map_err(|source| CdsError::Write { path: path.into(), source })
}

/// Reads one JSON value per non-blank line. The first bad line aborts with
/// its 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> CdsResult<Vec<T>> {
    let file = File::open(path).map_err(|source| CdsError::Read { path: path.into(), source })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CdsError::Read { path: path.into(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CdsError::parse(path, i + 1, e))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> CdsResult<()> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item).expect("record serializes"));
        text.push('\n');
    }
    write_string(path, &text)
}

/// Non-blank lines of a documents file, one document per line.
pub fn read_documents(path: &Path) -> CdsResult<Vec<String>> {
    let text = read_to_string(path)?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

pub fn read_qa(path: &Path) -> CdsResult<Vec<QARecord>> {
    read_jsonl(path)
}

/// Dataset line: `{"question", "tokens", "labels": [0|1, ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceLine {
    pub question: String,
    pub tokens: Vec<String>,
    pub labels: Vec<u8>,
}

impl From<&CriticalTokenInstance> for InstanceLine {
    fn from(inst: &CriticalTokenInstance) -> Self {
        InstanceLine {
            question: inst.question.clone(),
            tokens: inst.tokens.clone(),
            labels: inst.labels.iter().map(|l| u8::from(l.is_yes())).collect(),
        }
    }
}

impl TryFrom<InstanceLine> for CriticalTokenInstance {
    type Error = Error;

    fn try_from(line: InstanceLine) -> Result<Self> {
        let labels = line
            .labels
            .iter()
            .map(|&l| match l {
                0 => Ok(DecisionLabel::No),
                1 => Ok(DecisionLabel::Yes),
                other => Err(Error::InvalidArgument(format!("label {other} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        CriticalTokenInstance::new(line.question, line.tokens, labels)
    }
}

pub fn read_instances(path: &Path) -> CdsResult<Vec<CriticalTokenInstance>> {
    let file = File::open(path).map_err(|source| CdsError::Read { path: path.into(), source })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CdsError::Read { path: path.into(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: InstanceLine = serde_json::from_str(&line).map_err(|e| CdsError::parse(path, i + 1, e))?;
        out.push(parsed.try_into().map_err(|e| CdsError::parse(path, i + 1, e))?);
    }
    Ok(out)
}

pub fn write_instances(path: &Path, instances: &[CriticalTokenInstance]) -> CdsResult<()> {
    let lines: Vec<InstanceLine> = instances.iter().map(InstanceLine::from).collect();
    write_jsonl(path, &lines)
}

/// One decoding step in a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub position: usize,
    pub token: String,
    pub decision: DecisionLabel,
    pub source: Source,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proposed: Option<String>,
}

/// Final line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub strategy: Strategy,
    pub terminated_by: Termination,
    pub tokens: usize,
    pub aligned_calls: usize,
    pub pretrained_calls: usize,
    pub classifier_calls: usize,
    pub cost: CostReport,
}

/// Trace as JSONL text: one [`TraceLine`] per step, then `{"summary": ...}`.
/// Token strings are looked up in `vocab`, the aligned model's vocabulary.
pub fn trace_jsonl(result: &GenerationResult, vocab: &Vocabulary, strategy: Strategy, cost: CostReport) -> String {
    let name = |t: TokenId| vocab.token(t).map_or_else(|| t.to_string(), String::from);
    let mut out = String::new();
    for step in &result.trace.steps {
        let line = TraceLine {
            position: step.position,
            token: name(step.accepted),
            decision: step.decision,
            source: step.source,
            entropy: step.entropy,
            proposed: step.proposed.map(name),
        };
        out.push_str(&serde_json::to_string(&line).expect("trace line serializes"));
        out.push('\n');
    }
    let c = &result.trace.counters;
    let summary = TraceSummary {
        strategy,
        terminated_by: result.terminated_by,
        tokens: result.tokens.len(),
        aligned_calls: c.aligned_calls,
        pretrained_calls: c.pretrained_calls,
        classifier_calls: c.classifier_calls,
        cost,
    };
    out.push_str(&serde_json::json!({ "summary": summary }).to_string());
    out.push('\n');
    out
}
