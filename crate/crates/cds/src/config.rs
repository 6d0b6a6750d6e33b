//! `cds-config/1` run configuration (TOML).
//!
//! ```toml
//! format = "cds-config/1"
//! seed = 7
//! dataset = "facts.jsonl"
//!
//! [strategy]
//! name = "model-cds"
//! max_tokens = 64
//!
//! [models.aligned]
//! path = "aligned.json"
//!
//! [models.pretrained]
//! endpoint = "http://127.0.0.1:8000"
//!
//! [classifier]
//! kind = "heuristic"
//! ```
//!
//! Relative paths are resolved against the directory holding the config file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cds_core::decoding::{AlignedStopPolicy, GAMMA_LLAMA2, GAMMA_MISTRAL};
use cds_core::model::{FewShotSpec, FewShotTemplate, MAX_SHOTS};
use cds_core::{
    ClassifierMode, CriticalTokenClassifier, LanguageModel, Strategy, StrategyConfig, Vocabulary,
};
use serde::Deserialize;

use crate::error::{CdsError, CdsResult};
use crate::formats::{self, LocalClassifier, LocalModel};
use crate::remote::{Detokenize, EndpointConfig, RemoteClassifier, RemoteModel, DEFAULT_TOP_K};

pub const CONFIG_FORMAT: &str = "cds-config/1";

/// System prompt of the short-answer QA runs.
pub const SYSTEM_PROMPT_QA: &str =
    "You are a helpful, respectful and honest assistant. Always answer as helpfully as possible.";

/// System prompt of the biography runs.
pub const SYSTEM_PROMPT_FACTSCORE: &str = "You are a helpful, respectful and honest assistant. \
Always answer as helpfully as possible, while being safe. Your answers should not include any \
harmful, unethical, racist, sexist, toxic, dangerous, or illegal content. Please ensure that your \
responses are socially unbiased and positive in nature.";

pub const DEFAULT_ALIGNED_TEMPLATE: &str = "{system}\n\nQuestion: {question}\nAnswer:";

pub type SharedModel = Arc<dyn LanguageModel + Send + Sync>;
pub type SharedClassifier = Arc<dyn CriticalTokenClassifier + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    format: String,
    #[serde(default)]
    seed: u64,
    parallel: Option<usize>,
    output_dir: Option<PathBuf>,
    dataset: Option<PathBuf>,
    dataset_name: Option<String>,
    #[serde(default)]
    strategy: StrategySection,
    #[serde(default)]
    models: ModelsSection,
    classifier: Option<ClassifierSpec>,
    #[serde(default)]
    prompts: PromptSection,
    dataset_generation: Option<DatasetGeneration>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaPreset {
    Llama2,
    Mistral,
}

impl GammaPreset {
    pub fn value(self) -> f64 {
        match self {
            GammaPreset::Llama2 => GAMMA_LLAMA2,
            GammaPreset::Mistral => GAMMA_MISTRAL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategySection {
    pub name: Strategy,
    pub temperature: f64,
    pub gamma: Option<f64>,
    pub gamma_preset: Option<GammaPreset>,
    pub lambda_mix: f64,
    pub max_tokens: usize,
    pub aligned_stop: AlignedStopPolicy,
    pub cross_vocab: bool,
    /// STOP token strings; the output model's own STOP set when absent.
    pub stop_tokens: Option<Vec<String>>,
}

impl Default for StrategySection {
    fn default() -> Self {
        let d = StrategyConfig::default();
        StrategySection {
            name: d.strategy,
            temperature: d.temperature,
            gamma: None,
            gamma_preset: None,
            lambda_mix: d.lambda_mix,
            max_tokens: d.max_tokens,
            aligned_stop: d.aligned_stop,
            cross_vocab: d.cross_vocab,
            stop_tokens: None,
        }
    }
}

/// A model role: a local `cds-model/1` file or a served endpoint.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub path: Option<PathBuf>,
    pub endpoint: Option<String>,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default)]
    pub detokenize: Detokenize,
    /// Vocabulary file (`{"tokens", "stop_ids"}`) for servers that do not
    /// publish one.
    pub vocab: Option<PathBuf>,
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

fn default_retries() -> u32 {
    2
}

fn default_timeout() -> f64 {
    30.0
}

impl ModelSpec {
    pub fn local(path: impl Into<PathBuf>) -> Self {
        ModelSpec {
            path: Some(path.into()),
            endpoint: None,
            top_k: DEFAULT_TOP_K,
            retries: default_retries(),
            timeout_secs: default_timeout(),
            detokenize: Detokenize::Whitespace,
            vocab: None,
        }
    }

    fn endpoint_config(&self, url: &str) -> EndpointConfig {
        EndpointConfig {
            url: url.into(),
            top_k: self.top_k,
            retries: self.retries,
            timeout_secs: self.timeout_secs,
            detokenize: self.detokenize,
        }
    }

    pub fn load(&self) -> CdsResult<SharedModel> {
        match (&self.path, &self.endpoint) {
            (Some(path), None) => Ok(Arc::new(LocalModel::load(path)?)),
            (None, Some(url)) => {
                let cfg = self.endpoint_config(url);
                let model = match &self.vocab {
                    Some(vpath) => {
                        let text = formats::read_to_string(vpath)?;
                        let vocab: Vocabulary =
                            serde_json::from_str(&text).map_err(|e| CdsError::parse(vpath, 0, e))?;
                        RemoteModel::with_vocabulary(&cfg, vocab)?
                    }
                    None => RemoteModel::connect(&cfg)?,
                };
                Ok(Arc::new(model))
            }
            _ => Err(CdsError::config("a model needs exactly one of `path` or `endpoint`")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsSection {
    pub aligned: Option<ModelSpec>,
    pub pretrained: Option<ModelSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Heuristic,
    File,
    Endpoint,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSpec {
    pub kind: ClassifierKind,
    pub path: Option<PathBuf>,
    pub endpoint: Option<String>,
    /// Protocol of a served classifier; files carry their own.
    #[serde(default)]
    pub mode: ClassifierMode,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

impl ClassifierSpec {
    pub fn load(&self) -> CdsResult<SharedClassifier> {
        match self.kind {
            ClassifierKind::Heuristic => Ok(Arc::new(LocalClassifier::Heuristic(Default::default()))),
            ClassifierKind::File => {
                let path = self.path.as_ref().ok_or_else(|| CdsError::config("classifier kind `file` needs `path`"))?;
                Ok(Arc::new(LocalClassifier::load(path)?))
            }
            ClassifierKind::Endpoint => {
                let url = self
                    .endpoint
                    .as_ref()
                    .ok_or_else(|| CdsError::config("classifier kind `endpoint` needs `endpoint`"))?;
                let cfg = EndpointConfig {
                    url: url.clone(),
                    retries: self.retries,
                    timeout_secs: self.timeout_secs,
                    ..Default::default()
                };
                Ok(Arc::new(RemoteClassifier::new(&cfg, self.mode)?))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemPreset {
    Qa,
    Factscore,
    None,
}

impl SystemPreset {
    pub fn text(self) -> &'static str {
        match self {
            SystemPreset::Qa => SYSTEM_PROMPT_QA,
            SystemPreset::Factscore => SYSTEM_PROMPT_FACTSCORE,
            SystemPreset::None => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSection {
    /// Aligned-model prompt with `{system}` and `{question}`.
    pub aligned_template: String,
    pub system_prompt: Option<String>,
    pub system_preset: Option<SystemPreset>,
    /// Shots given to the pretrained model unless overridden.
    pub shots: usize,
    /// QA JSONL; the first answer of each record is its shot answer.
    pub fewshot_file: Option<PathBuf>,
    pub fewshot_block: Option<String>,
    pub fewshot_live: Option<String>,
}

impl Default for PromptSection {
    fn default() -> Self {
        PromptSection {
            aligned_template: DEFAULT_ALIGNED_TEMPLATE.into(),
            system_prompt: None,
            system_preset: None,
            shots: MAX_SHOTS,
            fewshot_file: None,
            fewshot_block: None,
            fewshot_live: None,
        }
    }
}

impl PromptSection {
    pub fn system(&self) -> &str {
        match (&self.system_prompt, self.system_preset) {
            (Some(s), _) => s,
            (None, Some(p)) => p.text(),
            (None, None) => SYSTEM_PROMPT_QA,
        }
    }

    /// The few-shot spec with every available shot (at most five).
    pub fn fewshot(&self) -> CdsResult<FewShotSpec> {
        let mut template = FewShotTemplate::default();
        if let Some(b) = &self.fewshot_block {
            template.block = b.clone();
        }
        if let Some(l) = &self.fewshot_live {
            template.live = l.clone();
        }
        let shots = match &self.fewshot_file {
            Some(path) => formats::read_qa(path)?
                .into_iter()
                .take(MAX_SHOTS)
                .map(|r| (r.question.clone(), r.gold_aliases()[0].clone()))
                .collect(),
            None => Vec::new(),
        };
        Ok(FewShotSpec::new(shots, template)?)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetGeneration {
    pub generator: ModelSpec,
    pub extractor: ModelSpec,
    /// Prompt with `{document}` asking for questions.
    pub question_template: String,
    /// Prompt with `{document}` and `{question}` asking for an answer.
    pub answer_template: String,
    /// Prompt with `{question}` and `{answer}` asking for a JSON list of the
    /// answer's critical spans.
    pub extract_template: String,
    #[serde(default = "default_questions")]
    pub questions_per_doc: usize,
    #[serde(default = "default_gen_tokens")]
    pub max_tokens: usize,
}

fn default_questions() -> usize {
    5
}

fn default_gen_tokens() -> usize {
    256
}

/// A loaded configuration with every path resolved and checked.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub parallel: usize,
    pub output_dir: PathBuf,
    pub dataset: Option<PathBuf>,
    pub dataset_name: String,
    pub strategy: StrategySection,
    pub models: ModelsSection,
    pub classifier: Option<ClassifierSpec>,
    pub prompts: PromptSection,
    pub dataset_generation: Option<DatasetGeneration>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn must_exist(p: &Path, what: &str) -> CdsResult<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(CdsError::config(format!("{what} {} does not exist", p.display())))
    }
}

fn resolve_model(base: &Path, spec: &mut ModelSpec, role: &str) -> CdsResult<()> {
    if spec.path.is_some() == spec.endpoint.is_some() {
        return Err(CdsError::config(format!("{role} model needs exactly one of `path` or `endpoint`")));
    }
    for p in spec.path.iter_mut().chain(spec.vocab.iter_mut()) {
        resolve(base, p);
        must_exist(p, &format!("{role} model file"))?;
    }
    Ok(())
}

impl RunConfig {
    pub fn load(path: &Path) -> CdsResult<Self> {
        let text = formats::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> CdsResult<Self> {
        let mut raw: RawConfig = toml::from_str(text).map_err(|e| CdsError::config(e.to_string()))?;
        if raw.format != CONFIG_FORMAT {
            return Err(CdsError::config(format!(
                "unsupported config format {:?}, expected {CONFIG_FORMAT:?}",
                raw.format
            )));
        }
        if let Some(m) = raw.models.aligned.as_mut() {
            resolve_model(base, m, "aligned")?;
        }
        if let Some(m) = raw.models.pretrained.as_mut() {
            resolve_model(base, m, "pretrained")?;
        }
        if let Some(c) = raw.classifier.as_mut() {
            if let Some(p) = c.path.as_mut() {
                resolve(base, p);
                must_exist(p, "classifier file")?;
            }
        }
        if let Some(g) = raw.dataset_generation.as_mut() {
            resolve_model(base, &mut g.generator, "generator")?;
            resolve_model(base, &mut g.extractor, "extractor")?;
        }
        if let Some(p) = raw.prompts.fewshot_file.as_mut() {
            resolve(base, p);
            must_exist(p, "few-shot file")?;
        }
        if let Some(p) = raw.dataset.as_mut() {
            resolve(base, p);
            must_exist(p, "dataset")?;
        }
        let mut output_dir = raw.output_dir.unwrap_or_else(|| PathBuf::from("out"));
        resolve(base, &mut output_dir);
        if raw.prompts.shots > MAX_SHOTS {
            return Err(CdsError::config(format!("at most {MAX_SHOTS} shots are supported")));
        }
        if raw.parallel == Some(0) {
            return Err(CdsError::config("`parallel` must be at least 1"));
        }
        let parallel = raw
            .parallel
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        let dataset_name = raw.dataset_name.unwrap_or_else(|| {
            raw.dataset
                .as_ref()
                .and_then(|p| p.file_stem())
                .map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned())
        });
        let cfg = RunConfig {
            seed: raw.seed,
            parallel,
            output_dir,
            dataset: raw.dataset,
            dataset_name,
            strategy: raw.strategy,
            models: raw.models,
            classifier: raw.classifier,
            prompts: raw.prompts,
            dataset_generation: raw.dataset_generation,
        };
        // a config that only drives dataset generation needs no decoding roles
        let dataset_only = cfg.dataset_generation.is_some() && cfg.models.aligned.is_none() && cfg.models.pretrained.is_none();
        if !dataset_only {
            cfg.check_roles(cfg.strategy.name)?;
        }
        Ok(cfg)
    }

    /// Errors unless every role `strategy` needs is configured.
    pub fn check_roles(&self, strategy: Strategy) -> CdsResult<()> {
        let missing = if strategy.needs_aligned() && self.models.aligned.is_none() {
            Some("[models.aligned]")
        } else if strategy.needs_pretrained() && self.models.pretrained.is_none() {
            Some("[models.pretrained]")
        } else if strategy.needs_classifier() && self.classifier.is_none() {
            Some("[classifier]")
        } else {
            None
        };
        match missing {
            Some(section) => Err(CdsError::config(format!("{strategy} needs {section}"))),
            None => Ok(()),
        }
    }

    /// The engine configuration for `strategy`. STOP strings are resolved in
    /// `output_vocab`, the vocabulary the generated tokens live in.
    pub fn strategy_config(&self, strategy: Strategy, seed: u64, output_vocab: &Vocabulary) -> CdsResult<StrategyConfig> {
        let s = &self.strategy;
        let gamma = match (s.gamma, s.gamma_preset) {
            (Some(_), Some(_)) => return Err(CdsError::config("set `gamma` or `gamma_preset`, not both")),
            (Some(g), None) => Some(g),
            (None, Some(p)) => Some(p.value()),
            (None, None) => None,
        };
        let stop_ids = match &s.stop_tokens {
            None => None,
            Some(tokens) => Some(
                tokens
                    .iter()
                    .map(|t| {
                        output_vocab
                            .id(t)
                            .ok_or_else(|| CdsError::config(format!("stop token {t:?} is not in the vocabulary")))
                    })
                    .collect::<CdsResult<BTreeSet<_>>>()?,
            ),
        };
        let config = StrategyConfig {
            strategy,
            temperature: s.temperature,
            gamma,
            lambda_mix: s.lambda_mix,
            max_tokens: s.max_tokens,
            stop_ids,
            seed,
            aligned_stop: s.aligned_stop,
            cross_vocab: s.cross_vocab,
        };
        config.validate()?;
        Ok(config)
    }
}
