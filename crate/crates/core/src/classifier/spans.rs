use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use super::{CriticalTokenInstance, DecisionLabel};

/// Critical substrings extracted from an answer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SpanAnnotation {
    pub spans: Vec<String>,
}

/// Splits text into tokens with byte ranges into the original string.
pub trait SpanTokenizer {
    fn tokenize_with_offsets(&self, text: &str) -> Vec<(String, Range<usize>)>;
}

/// Whitespace splitting, matching the desk-scale vocabularies.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceSpans;

impl SpanTokenizer for WhitespaceSpans {
    fn tokenize_with_offsets(&self, text: &str) -> Vec<(String, Range<usize>)> {
        let mut out = Vec::new();
        let mut start = None;
        for (i, c) in text.char_indices() {
            match (c.is_whitespace(), start) {
                (true, Some(s)) => {
                    out.push((String::from(&text[s..i]), s..i));
                    start = None;
                }
                (false, None) => start = Some(i),
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push((String::from(&text[s..]), s..text.len()));
        }
        out
    }
}

/// Tokens and labels of one answer, plus the spans that could not be found.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledAnswer {
    pub tokens: Vec<String>,
    pub labels: Vec<DecisionLabel>,
    pub skipped: Vec<String>,
}

impl LabeledAnswer {
    pub fn into_instance(self, question: String) -> CriticalTokenInstance {
        CriticalTokenInstance { question, tokens: self.tokens, labels: self.labels }
    }
}

/// Byte ranges of every (possibly overlapping) occurrence of `needle`.
fn occurrences(haystack: &str, needle: &str) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    if needle.is_empty() {
        return out;
    }
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(needle) {
        let start = from + pos;
        out.push(start..start + needle.len());
        // step one character so overlapping matches are found too
        from = start + haystack[start..].chars().next().map_or(1, char::len_utf8);
    }
    out
}

/// Labels every token that overlaps an occurrence of any span as Yes.
///
/// Matching is case-sensitive and covers all occurrences. Spans that do not
/// occur in the answer are reported in [`LabeledAnswer::skipped`].
pub fn map_spans_to_labels<T: SpanTokenizer + ?Sized>(
    answer: &str,
    spans: &SpanAnnotation,
    tokenizer: &T,
) -> LabeledAnswer {
    let pieces = tokenizer.tokenize_with_offsets(answer);
    let mut hits: Vec<Range<usize>> = Vec::new();
    let mut skipped = Vec::new();
    for span in &spans.spans {
        let found = occurrences(answer, span);
        if found.is_empty() {
            skipped.push(span.clone());
        }
        hits.extend(found);
    }
    let labels = pieces
        .iter()
        .map(|(_, r)| DecisionLabel::from_bool(hits.iter().any(|h| r.start < h.end && h.start < r.end)))
        .collect();
    LabeledAnswer { tokens: pieces.into_iter().map(|(t, _)| t).collect(), labels, skipped }
}
