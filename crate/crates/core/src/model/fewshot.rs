use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::Tokenizer;
use crate::dist::TokenId;
use crate::error::{Error, Result};
use crate::text::fill_template;

pub const MAX_SHOTS: usize = 5;

/// Block templates for a few-shot prompt. `block` is rendered once per shot
/// with `{question}` and `{answer}`; `live` once at the end with `{question}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotTemplate {
    pub block: String,
    pub live: String,
}

impl Default for FewShotTemplate {
    fn default() -> Self {
        FewShotTemplate {
            block: "Question: {question}\nAnswer: {answer}\n\n".into(),
            live: "Question: {question}\nAnswer:".into(),
        }
    }
}

/// Example question/answer pairs prepended to the pretrained model's prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotSpec {
    shots: Vec<(String, String)>,
    #[serde(default)]
    template: FewShotTemplate,
}

impl FewShotSpec {
    pub fn new(shots: Vec<(String, String)>, template: FewShotTemplate) -> Result<Self> {
        if shots.len() > MAX_SHOTS {
            return Err(Error::invalid(format!(
                "{} shots given, at most {MAX_SHOTS} supported",
                shots.len()
            )));
        }
        Ok(FewShotSpec { shots, template })
    }

    pub fn with_default_template(shots: Vec<(String, String)>) -> Result<Self> {
        Self::new(shots, FewShotTemplate::default())
    }

    pub fn zero_shot() -> Self {
        FewShotSpec { shots: Vec::new(), template: FewShotTemplate::default() }
    }

    pub fn shots(&self) -> &[(String, String)] {
        &self.shots
    }

    pub fn template(&self) -> &FewShotTemplate {
        &self.template
    }

    /// The same spec keeping only the first `k` shots.
    pub fn truncated(&self, k: usize) -> Self {
        FewShotSpec {
            shots: self.shots.iter().take(k).cloned().collect(),
            template: self.template.clone(),
        }
    }

    pub fn render(&self, question: &str) -> String {
        let mut out = String::new();
        for (q, a) in &self.shots {
            out.push_str(&fill_template(&self.template.block, &[("question", q), ("answer", a)]));
        }
        out.push_str(&fill_template(&self.template.live, &[("question", question)]));
        out
    }
}

/// Renders the prompt for `question` and tokenizes it.
pub fn render_fewshot_prefix<T: Tokenizer + ?Sized>(
    spec: &FewShotSpec,
    question: &str,
    tokenizer: &T,
) -> Result<Vec<TokenId>> {
    tokenizer.encode(&spec.render(question))
}
