//! Output schemas for each template and the strict parser behind them.

use serde::{Deserialize, Serialize};

use super::{Bindings, TemplateId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub accept: bool,
    pub rationale: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Urgency {
    None,
    Low,
    High,
}

impl Urgency {
    pub fn as_str(self) -> &'static str {
        match self {
            Urgency::None => "none",
            Urgency::Low => "low",
            Urgency::High => "high",
        }
    }
}

/// Feature extraction as the provider reported it; tags are not yet vetted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureOutput {
    pub intent: String,
    pub tone: String,
    pub urgency: Urgency,
    pub requested_actions: Vec<String>,
    pub entities: Vec<String>,
    pub contextual_clues: Vec<String>,
    pub red_flag_candidates: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictLabel {
    Scam,
    Legitimate,
}

impl VerdictLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            VerdictLabel::Scam => "scam",
            VerdictLabel::Legitimate => "legitimate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentOutput {
    pub score: f64,
    pub verdict: VerdictLabel,
    pub rationale: String,
    pub cited_evidence: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum StructuredOutput {
    Questions(Vec<QaPair>),
    Verdict(JudgeVerdict),
    Features(FeatureOutput),
    Assessment(AssessmentOutput),
}

#[derive(Deserialize)]
struct QuestionsEnvelope {
    pairs: Vec<QaPair>,
}

/// The reply must be a single JSON document, optionally inside one
/// Markdown code fence.
fn json_body(raw: &str) -> &str {
    let trimmed = raw.trim();
    if let Some(rest) = trimmed.strip_prefix("```") {
        let rest = rest.strip_prefix("json").unwrap_or(rest);
        if let Some(inner) = rest.strip_suffix("```") {
            return inner.trim();
        }
    }
    trimmed
}

fn decode<T: for<'de> Deserialize<'de>>(raw: &str) -> Result<T, String> {
    serde_json::from_str(json_body(raw)).map_err(|e| format!("invalid JSON for schema: {e}"))
}

/// Parse and validate `raw` against `template_id`'s schema.
pub fn parse_output(
    template_id: TemplateId,
    raw: &str,
    bindings: &Bindings,
) -> Result<StructuredOutput, String> {
    match template_id {
        TemplateId::QuestionGen => {
            let envelope: QuestionsEnvelope = decode(raw)?;
            if let Some(expected) = bindings.get("count").and_then(|c| c.trim().parse::<usize>().ok()) {
                if envelope.pairs.len() != expected {
                    return Err(format!(
                        "expected {expected} pairs, got {}",
                        envelope.pairs.len()
                    ));
                }
            }
            let pairs: Vec<QaPair> = envelope
                .pairs
                .into_iter()
                .map(|p| QaPair {
                    question: p.question.trim().to_string(),
                    answer: p.answer.trim().to_string(),
                })
                .collect();
            if pairs.iter().any(|p| p.question.is_empty() || p.answer.is_empty()) {
                return Err("empty question or answer".into());
            }
            Ok(StructuredOutput::Questions(pairs))
        }
        TemplateId::AnswerJudge => {
            let mut verdict: JudgeVerdict = decode(raw)?;
            verdict.rationale = verdict.rationale.trim().to_string();
            if !verdict.accept && verdict.rationale.is_empty() {
                return Err("rejection without rationale".into());
            }
            Ok(StructuredOutput::Verdict(verdict))
        }
        TemplateId::FeatureExtract => Ok(StructuredOutput::Features(decode(raw)?)),
        TemplateId::FraudAssess => {
            let assessment: AssessmentOutput = decode(raw)?;
            if !assessment.score.is_finite() || !(0.0..=1.0).contains(&assessment.score) {
                return Err(format!("score {} outside [0, 1]", assessment.score));
            }
            if assessment.rationale.trim().is_empty() {
                return Err("empty rationale".into());
            }
            Ok(StructuredOutput::Assessment(assessment))
        }
    }
}
