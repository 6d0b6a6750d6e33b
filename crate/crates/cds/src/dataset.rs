//! Critical-token dataset generation: questions about each document, an
//! answer per question, critical spans extracted as JSON, then mapped back
//! onto the answer's tokens.

use cds_core::classifier::{map_spans_to_labels, SpanAnnotation, WhitespaceSpans};
use cds_core::text::fill_template;
use cds_core::{generate, CriticalTokenInstance, LanguageModel, Strategy, StrategyConfig};
use rayon::prelude::*;

use crate::error::CdsResult;

/// Prompt templates of the three pipeline stages.
#[derive(Debug, Clone, PartialEq)]
pub struct Templates {
    /// `{document}`
    pub question: String,
    /// `{document}`, `{question}`
    pub answer: String,
    /// `{question}`, `{answer}`
    pub extract: String,
}

pub struct Pipeline<'a> {
    pub generator: &'a (dyn LanguageModel + Sync),
    pub extractor: &'a (dyn LanguageModel + Sync),
    pub templates: Templates,
    pub questions_per_doc: usize,
    pub max_tokens: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetOutcome {
    pub instances: Vec<CriticalTokenInstance>,
    /// Answers dropped because the extractor output was not a JSON string list.
    pub skipped: usize,
    /// Extracted spans that do not occur in their answer.
    pub unmatched_spans: usize,
}

#[derive(Default)]
struct DocOutcome {
    instances: Vec<CriticalTokenInstance>,
    skipped: usize,
    unmatched_spans: usize,
}

fn strip_numbering(line: &str) -> &str {
    let t = line.trim_start_matches(|c: char| c.is_ascii_digit());
    let t = if t.len() < line.len() { t.trim_start_matches(['.', ')', ':']) } else { t };
    t.trim_start_matches(['-', '*']).trim()
}

/// Questions in generator output: one per line, and lines holding several
/// questions are split after each word ending in `?`. Numbering and bullets
/// are removed.
pub fn parse_questions(text: &str, limit: usize) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.lines() {
        let mut current: Vec<&str> = Vec::new();
        let mut flush = |words: &mut Vec<&str>| {
            let q = words.join(" ");
            let q = strip_numbering(&q);
            if !q.is_empty() {
                out.push(q.to_string());
            }
            words.clear();
        };
        for word in line.split_whitespace() {
            current.push(word);
            if word.ends_with('?') {
                flush(&mut current);
            }
        }
        flush(&mut current);
    }
    out.truncate(limit);
    out
}

/// Extractor output must be exactly a JSON array of strings.
pub fn parse_spans(text: &str) -> Option<SpanAnnotation> {
    serde_json::from_str::<Vec<String>>(text.trim()).ok().map(|spans| SpanAnnotation { spans })
}

fn complete(model: &(dyn LanguageModel + Sync), prompt: &str, max_tokens: usize) -> cds_core::Result<String> {
    let prefix = model.encode(prompt)?;
    let config = StrategyConfig { max_tokens, ..StrategyConfig::new(Strategy::AlignedGreedy) };
    let result = generate(model, &prefix, &config).map_err(|f| f.error)?;
    Ok(model.decode(result.content()))
}

impl Pipeline<'_> {
    fn document(&self, doc: &str) -> cds_core::Result<DocOutcome> {
        let t = &self.templates;
        let raw = complete(self.generator, &fill_template(&t.question, &[("document", doc)]), self.max_tokens)?;
        let mut out = DocOutcome::default();
        for question in parse_questions(&raw, self.questions_per_doc) {
            let answer = complete(
                self.generator,
                &fill_template(&t.answer, &[("document", doc), ("question", &question)]),
                self.max_tokens,
            )?;
            let extracted = complete(
                self.extractor,
                &fill_template(&t.extract, &[("question", &question), ("answer", &answer)]),
                self.max_tokens,
            )?;
            let Some(spans) = parse_spans(&extracted) else {
                log::warn!("skipping answer to {question:?}: extractor output is not a JSON list: {extracted:?}");
                out.skipped += 1;
                continue;
            };
            let labeled = map_spans_to_labels(&answer, &spans, &WhitespaceSpans);
            for s in &labeled.skipped {
                log::warn!("span {s:?} does not occur in the answer to {question:?}");
            }
            out.unmatched_spans += labeled.skipped.len();
            out.instances.push(labeled.into_instance(question));
        }
        Ok(out)
    }

    /// Runs every document, in parallel, keeping document order. Answers are
    /// never checked for correctness.
    pub fn run(&self, documents: &[String]) -> CdsResult<DatasetOutcome> {
        let per_doc: Vec<DocOutcome> =
            documents.par_iter().map(|d| self.document(d)).collect::<cds_core::Result<_>>()?;
        let mut total = DatasetOutcome::default();
        for d in per_doc {
            total.instances.extend(d.instances);
            total.skipped += d.skipped;
            total.unmatched_spans += d.unmatched_spans;
        }
        Ok(total)
    }
}
