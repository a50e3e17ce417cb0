//! Versioned prompt templates with `{{name}}` placeholders.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::LlmError;

/// The judging instruction block, kept byte-for-byte.
pub const JUDGE_INSTRUCTION: &str = "A security question and answer pair is used to authenticate users. A correct answer grants the user access to a protected resource. You are given a security question, its model answer stored in the system, and a user-provided answer. Your task is to determine whether the user’s answer should be accepted. Do not grade based on exact wording. Evaluate the meaning of the answer: if its content aligns with the model answer, the user should be granted access.";

/// Version tag of the bundled prompt set.
pub const TEMPLATE_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    QuestionGen,
    AnswerJudge,
    FeatureExtract,
    FraudAssess,
}

impl TemplateId {
    pub const ALL: [TemplateId; 4] = [
        TemplateId::QuestionGen,
        TemplateId::AnswerJudge,
        TemplateId::FeatureExtract,
        TemplateId::FraudAssess,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::QuestionGen => "question_gen",
            TemplateId::AnswerJudge => "answer_judge",
            TemplateId::FeatureExtract => "feature_extract",
            TemplateId::FraudAssess => "fraud_assess",
        }
    }

    fn bundled_text(self) -> &'static str {
        match self {
            TemplateId::QuestionGen => include_str!("../../prompts/v1/question_gen.txt"),
            TemplateId::AnswerJudge => include_str!("../../prompts/v1/answer_judge.txt"),
            TemplateId::FeatureExtract => include_str!("../../prompts/v1/feature_extract.txt"),
            TemplateId::FraudAssess => include_str!("../../prompts/v1/fraud_assess.txt"),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub type Bindings = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub template_id: TemplateId,
    pub text: String,
    pub required_placeholders: BTreeSet<String>,
}

impl PromptTemplate {
    pub fn new(template_id: TemplateId, text: impl Into<String>) -> Self {
        let text = text.into();
        let required_placeholders = placeholders(&text);
        Self {
            template_id,
            text,
            required_placeholders,
        }
    }

    pub fn bundled(template_id: TemplateId) -> Self {
        Self::new(template_id, template_id.bundled_text())
    }

    /// Substitute every placeholder. Fails on the first unbound name.
    ///
    /// Substitution is single-pass, so bound values containing `{{..}}` are
    /// left untouched.
    pub fn render(&self, bindings: &Bindings) -> Result<String, LlmError> {
        if let Some(missing) = self
            .required_placeholders
            .iter()
            .find(|name| !bindings.contains_key(*name))
        {
            return Err(LlmError::MissingPlaceholder {
                template: self.template_id,
                name: missing.clone(),
            });
        }
        let mut out = String::with_capacity(self.text.len() + 256);
        let mut rest = self.text.as_str();
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            match after.find("}}") {
                Some(end) => {
                    let name = after[..end].trim();
                    match bindings.get(name) {
                        Some(value) => out.push_str(value),
                        None => out.push_str(&rest[start..start + 2 + end + 2]),
                    }
                    rest = &after[end + 2..];
                }
                None => {
                    out.push_str(&rest[start..]);
                    rest = "";
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}

fn placeholders(text: &str) -> BTreeSet<String> {
    let mut names = BTreeSet::new();
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else { break };
        let name = after[..end].trim();
        if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            names.insert(name.to_string());
        }
        rest = &after[end + 2..];
    }
    names
}

/// The four templates a gateway renders.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<TemplateId, PromptTemplate>,
}

impl TemplateSet {
    pub fn bundled() -> Self {
        Self {
            templates: TemplateId::ALL
                .into_iter()
                .map(|id| (id, PromptTemplate::bundled(id)))
                .collect(),
        }
    }

    /// Replace one template. The judge template must keep the instruction block.
    pub fn with_template(mut self, template: PromptTemplate) -> Result<Self, LlmError> {
        if template.template_id == TemplateId::AnswerJudge && !template.text.contains(JUDGE_INSTRUCTION) {
            return Err(LlmError::InvalidRequest(
                "answer_judge template must contain the judging instruction block verbatim".into(),
            ));
        }
        self.templates.insert(template.template_id, template);
        Ok(self)
    }

    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        &self.templates[&id]
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::bundled()
    }
}
