//! Question answering runs: prompt construction, parallel generation,
//! scoring and report files.

use std::path::{Path, PathBuf};

use cds_core::decoding::{cost_report, CostReport, DecodeFailure, Termination};
use cds_core::eval::{run_experiment, QARecord};
use cds_core::model::{render_fewshot_prefix, FewShotSpec};
use cds_core::text::fill_template;
use cds_core::{
    decode, GenerationResult, LanguageModel, Participants, PrefixTriple, Strategy, StrategyConfig,
};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SharedClassifier, SharedModel};
use crate::error::{CdsError, CdsResult};
use crate::formats;

pub const BOOTSTRAP_ITERATIONS: usize = 1000;

/// Loaded participants plus everything needed to build prompts.
#[derive(Clone)]
pub struct Engine {
    pub aligned: Option<SharedModel>,
    pub pretrained: Option<SharedModel>,
    pub classifier: Option<SharedClassifier>,
    pub aligned_template: String,
    pub system: String,
    pub fewshot: FewShotSpec,
}

impl Engine {
    /// Loads the roles any of `strategies` needs.
    pub fn load(cfg: &RunConfig, strategies: &[Strategy]) -> CdsResult<Self> {
        for &s in strategies {
            cfg.check_roles(s)?;
        }
        let any = |f: fn(Strategy) -> bool| strategies.iter().any(|&s| f(s));
        let load_model = |spec: &Option<crate::config::ModelSpec>| spec.as_ref().map(|m| m.load()).transpose();
        let aligned = if any(Strategy::needs_aligned) { load_model(&cfg.models.aligned)? } else { None };
        let pretrained = if any(Strategy::needs_pretrained) { load_model(&cfg.models.pretrained)? } else { None };
        let classifier = if any(Strategy::needs_classifier) {
            cfg.classifier.as_ref().map(|c| c.load()).transpose()?
        } else {
            None
        };
        Ok(Engine {
            aligned,
            pretrained,
            classifier,
            aligned_template: cfg.prompts.aligned_template.clone(),
            system: cfg.prompts.system().to_string(),
            fewshot: cfg.prompts.fewshot()?,
        })
    }

    /// The model whose vocabulary the generated tokens belong to.
    pub fn output_model(&self, strategy: Strategy) -> CdsResult<&SharedModel> {
        let m = match strategy {
            Strategy::PretrainedSampling | Strategy::PretrainedGreedy => &self.pretrained,
            _ => &self.aligned,
        };
        m.as_ref().ok_or_else(|| CdsError::config(format!("{strategy} has no output model loaded")))
    }

    pub fn prefixes(&self, question: &str, shots: usize) -> cds_core::Result<PrefixTriple> {
        let aligned = match &self.aligned {
            Some(m) => {
                let prompt = fill_template(&self.aligned_template, &[("system", &self.system), ("question", question)]);
                m.encode(&prompt)?
            }
            None => Vec::new(),
        };
        let pretrained = match &self.pretrained {
            Some(m) => render_fewshot_prefix(&self.fewshot.truncated(shots), question, m.as_ref())?,
            None => Vec::new(),
        };
        Ok(PrefixTriple::new(pretrained, aligned, question))
    }

    /// One generation. The returned charge is the pretrained context length
    /// when the strategy runs the pretrained model, else 0.
    pub fn run(&self, question: &str, shots: usize, config: &StrategyConfig) -> Result<(GenerationResult, u64), DecodeFailure> {
        let prefixes = self.prefixes(question, shots)?;
        let charge = if config.strategy.needs_pretrained() { prefixes.pretrained.len() as u64 } else { 0 };
        let participants = Participants {
            aligned: self.aligned.as_deref().map(|m| m as &dyn LanguageModel),
            pretrained: self.pretrained.as_deref().map(|m| m as &dyn LanguageModel),
            classifier: self.classifier.as_deref().map(|c| c as &dyn cds_core::CriticalTokenClassifier),
        };
        let result = decode(&participants, prefixes, config)?;
        Ok((result, charge))
    }

    /// Response text without the trailing STOP token.
    pub fn text(&self, strategy: Strategy, result: &GenerationResult) -> CdsResult<String> {
        Ok(self.output_model(strategy)?.decode(result.content()))
    }
}

/// Seed of item `index`: stream `index` of a ChaCha8 generator keyed by the
/// run seed.
pub fn item_seed(run_seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    rng.set_stream(index as u64);
    rng.next_u64()
}

/// Per-item report line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub index: usize,
    pub question: String,
    pub response: Option<String>,
    pub correct: Option<bool>,
    pub error: Option<String>,
    pub tokens: usize,
    pub critical_fraction: Option<f64>,
    pub cost_total: Option<u64>,
    pub terminated_by: Option<Termination>,
}

/// One summary row: a strategy at a shot count on a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: Strategy,
    pub dataset: String,
    pub accuracy: f64,
    pub stddev: Option<f64>,
    /// Mean share of steps decided Yes, over items that finished.
    pub critical_fraction: f64,
    /// Summed cost of all finished items.
    pub cost_total: u64,
    pub shots: usize,
    pub n: usize,
    pub errors: usize,
}

struct Generated {
    text: String,
    tokens: usize,
    cost: CostReport,
    terminated_by: Termination,
}

/// Runs `strategy` with `shots` over `dataset` on `parallel` threads. Items
/// are written back in dataset order.
pub fn evaluate(
    engine: &Engine,
    cfg: &RunConfig,
    dataset: &[QARecord],
    strategy: Strategy,
    shots: usize,
    parallel: usize,
    seed: u64,
) -> CdsResult<(SummaryRow, Vec<ItemRecord>)> {
    if dataset.is_empty() {
        return Err(CdsError::config("the dataset is empty"));
    }
    let vocab = engine.output_model(strategy)?.vocabulary().clone();
    let base = cfg.strategy_config(strategy, seed, &vocab)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| CdsError::config(format!("thread pool: {e}")))?;
    let outputs: Vec<Result<Generated, String>> = pool.install(|| {
        dataset
            .par_iter()
            .enumerate()
            .map(|(i, rec)| {
                let config = StrategyConfig { seed: item_seed(seed, i), ..base.clone() };
                let (result, charge) = engine.run(&rec.question, shots, &config).map_err(|f| f.to_string())?;
                let text = engine.text(strategy, &result).map_err(|e| e.to_string())?;
                Ok(Generated {
                    text,
                    tokens: result.tokens.len(),
                    cost: cost_report(&result.trace, charge),
                    terminated_by: result.terminated_by,
                })
            })
            .collect()
    });
    for (i, o) in outputs.iter().enumerate() {
        if let Err(e) = o {
            log::warn!("item {i}: {e}");
        }
    }
    let (report, items) = run_experiment(dataset, |i, _| match &outputs[i] {
        Ok(g) => Ok(g.text.clone()),
        Err(e) => Err(cds_core::Error::Protocol(e.clone())),
    })?;
    let report = report.with_bootstrap(BOOTSTRAP_ITERATIONS, &mut ChaCha8Rng::seed_from_u64(seed))?;

    let records: Vec<ItemRecord> = items
        .into_iter()
        .zip(&outputs)
        .map(|(item, out)| {
            let ok = out.as_ref().ok();
            ItemRecord {
                index: item.index,
                question: item.question,
                response: item.response,
                correct: item.correct,
                // the engine's message, not the wrapper used to feed scoring
                error: out.as_ref().err().cloned(),
                tokens: ok.map_or(0, |g| g.tokens),
                critical_fraction: ok.map(|g| g.cost.critical_fraction),
                cost_total: ok.map(|g| g.cost.total),
                terminated_by: ok.map(|g| g.terminated_by),
            }
        })
        .collect();
    let finished: Vec<&Generated> = outputs.iter().filter_map(|o| o.as_ref().ok()).collect();
    let critical_fraction = if finished.is_empty() {
        0.0
    } else {
        finished.iter().map(|g| g.cost.critical_fraction).sum::<f64>() / finished.len() as f64
    };
    let row = SummaryRow {
        strategy,
        dataset: cfg.dataset_name.clone(),
        accuracy: report.accuracy,
        stddev: report.bootstrap_stddev,
        critical_fraction,
        cost_total: finished.iter().map(|g| g.cost.total).sum(),
        shots,
        n: report.n,
        errors: report.errors,
    };
    Ok((row, records))
}

/// `items-<strategy>.jsonl`, with `-shots<k>` appended in shot sweeps.
pub fn items_path(dir: &Path, strategy: Strategy, shots: Option<usize>) -> PathBuf {
    match shots {
        Some(k) => dir.join(format!("items-{strategy}-shots{k}.jsonl")),
        None => dir.join(format!("items-{strategy}.jsonl")),
    }
}

/// Writes `summary.json` and `summary.csv` into `dir`.
pub fn write_summary(dir: &Path, rows: &[SummaryRow]) -> CdsResult<()> {
    let json = serde_json::to_string_pretty(rows).expect("summary serializes");
    formats::write_string(&dir.join("summary.json"), &(json + "\n"))?;
    let path = dir.join("summary.csv");
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CdsError::Write { path: path.clone(), source: e.into() };
    w.write_record(["strategy", "dataset", "accuracy", "stddev", "critical_fraction", "cost_total", "shots", "n", "errors"])
        .map_err(io)?;
    for r in rows {
        w.write_record([
            r.strategy.to_string(),
            r.dataset.clone(),
            format!("{:.6}", r.accuracy),
            r.stddev.map_or_else(String::new, |s| format!("{s:.6}")),
            format!("{:.6}", r.critical_fraction),
            r.cost_total.to_string(),
            r.shots.to_string(),
            r.n.to_string(),
            r.errors.to_string(),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CdsError::Write { path: path.clone(), source: e.into_error() })?;
    formats::write_string(&path, &String::from_utf8(bytes).expect("csv is utf-8"))
}

/// Parses a shot list: `3`, `0..5` (inclusive), `0..=5` or `1,3,5`.
pub fn parse_shots(spec: &str) -> CdsResult<Vec<usize>> {
    let bad = || CdsError::config(format!("cannot parse shots {spec:?}"));
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    let shots: Vec<usize> = if let Some((a, b)) = spec.split_once("..") {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        spec.split(',').map(num).collect::<CdsResult<_>>()?
    };
    if let Some(&k) = shots.iter().find(|&&k| k > cds_core::model::MAX_SHOTS) {
        return Err(CdsError::config(format!("{k} shots requested, at most {} supported", cds_core::model::MAX_SHOTS)));
    }
    Ok(shots)
}
