//! Retrieval-augmented scam assessment.
//!
//! A message goes through feature extraction, a top-k lookup in the
//! evidence store, and a final assessment prompt grounded on what was
//! retrieved. The verdict is always `score >= tau`; the model's own label is
//! kept for inspection but never decides.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::llm::{Bindings, LlmError, LlmGateway, StructuredOutput, TemplateId, Urgency, VerdictLabel};
use crate::store::{EvidenceStore, RetrievalHit, StoreError};
use crate::vocab::RedFlag;

/// Evidence binding used when retrieval is switched off.
pub const NO_RAG_MARKER: &str = "(retrieval disabled: judge from the message and features alone)";
/// Evidence binding used when retrieval found nothing.
pub const NO_EVIDENCE_MARKER: &str = "(no evidence retrieved)";
const NO_POLICIES_MARKER: &str = "(none)";

pub const DEFAULT_DECISION_THRESHOLD: f64 = 0.5;
pub const DEFAULT_RETRIEVAL_K: usize = 5;
pub const DEFAULT_POLICY_K: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FraudError {
    #[error("message is empty")]
    EmptyMessage,

    #[error("invalid settings: {0}")]
    InvalidSettings(String),

    #[error(transparent)]
    Llm(#[from] LlmError),

    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    #[default]
    Enabled,
    Disabled,
}

/// Extracted features with red flags restricted to the vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageFeatures {
    pub intent: String,
    pub tone: String,
    pub urgency: Urgency,
    pub requested_actions: Vec<String>,
    pub entities: Vec<String>,
    pub contextual_clues: Vec<String>,
    pub red_flags: BTreeSet<RedFlag>,
    /// Candidate tags the provider proposed that are not in the vocabulary.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped_tags: Vec<String>,
}

fn list_or_none(items: &[String], sep: &str) -> String {
    if items.is_empty() {
        NO_POLICIES_MARKER.to_string()
    } else {
        items.join(sep)
    }
}

/// The `features` binding for the assessment prompt, one attribute per line.
pub fn render_features(features: &MessageFeatures) -> String {
    let flags: Vec<String> = features.red_flags.iter().map(|f| f.to_string()).collect();
    format!(
        "intent: {}\ntone: {}\nurgency: {}\nrequested_actions: {}\nentities: {}\ncontextual_clues: {}\nred_flag_candidates: {}",
        features.intent,
        features.tone,
        features.urgency.as_str(),
        list_or_none(&features.requested_actions, "; "),
        list_or_none(&features.entities, "; "),
        list_or_none(&features.contextual_clues, "; "),
        list_or_none(&flags, ", "),
    )
}

/// One retrieved entry as it appears in the `evidence` binding:
///
/// ```text
/// [1] id=scam-007 label=scam similarity=0.8123 red_flags=fake_link,urgent_language
///     text: Your account is locked...
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceLine {
    pub rank: usize,
    pub id: String,
    pub label: String,
    pub similarity: f64,
    pub red_flags: Vec<String>,
}

impl EvidenceLine {
    pub fn from_hit(hit: &RetrievalHit) -> Self {
        Self {
            rank: hit.rank,
            id: hit.entry.entry_id.clone(),
            label: hit.entry.label.as_str().to_string(),
            similarity: hit.similarity,
            red_flags: hit.entry.red_flags.iter().map(|f| f.to_string()).collect(),
        }
    }

    pub fn render(&self) -> String {
        format!(
            "[{}] id={} label={} similarity={:.4} red_flags={}",
            self.rank,
            self.id,
            self.label,
            self.similarity,
            if self.red_flags.is_empty() {
                "-".to_string()
            } else {
                self.red_flags.join(",")
            }
        )
    }

    /// Parse a header line; other lines yield `None`.
    pub fn parse(line: &str) -> Option<Self> {
        let rest = line.trim().strip_prefix('[')?;
        let (rank, rest) = rest.split_once(']')?;
        let mut out = EvidenceLine {
            rank: rank.parse().ok()?,
            id: String::new(),
            label: String::new(),
            similarity: 0.0,
            red_flags: Vec::new(),
        };
        for field in rest.split_whitespace() {
            let (key, value) = field.split_once('=')?;
            match key {
                "id" => out.id = value.to_string(),
                "label" => out.label = value.to_string(),
                "similarity" => out.similarity = value.parse().ok()?,
                "red_flags" if value != "-" => {
                    out.red_flags = value.split(',').map(str::to_string).collect()
                }
                _ => {}
            }
        }
        (!out.id.is_empty()).then_some(out)
    }
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// The `evidence` binding for a set of hits.
pub fn render_evidence(hits: &[RetrievalHit]) -> String {
    if hits.is_empty() {
        return NO_EVIDENCE_MARKER.to_string();
    }
    hits.iter()
        .map(|h| format!("{}\n    text: {}", EvidenceLine::from_hit(h).render(), one_line(&h.entry.text)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Stable identifier for a message: a SHA-256 prefix of its text.
pub fn message_id(message: &str) -> String {
    hex::encode(&Sha256::digest(message.as_bytes())[..8])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRef {
    pub entry_id: String,
    pub label: VerdictLabel,
    pub similarity: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FraudAssessment {
    pub message_id: String,
    pub score: f64,
    pub verdict: VerdictLabel,
    /// What the model itself answered; informational only.
    pub model_verdict: VerdictLabel,
    pub rationale: String,
    pub cited_evidence: Vec<String>,
    /// Citations that did not match any retrieved entry.
    pub discarded_citations: Vec<String>,
    pub features: MessageFeatures,
    pub evidence: Vec<EvidenceRef>,
    pub policies: Vec<String>,
    pub rag_enabled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FraudSettings {
    /// Scam iff score >= `decision_threshold`.
    pub decision_threshold: f64,
    pub retrieval_k: usize,
    pub policy_k: usize,
}

impl Default for FraudSettings {
    fn default() -> Self {
        Self {
            decision_threshold: DEFAULT_DECISION_THRESHOLD,
            retrieval_k: DEFAULT_RETRIEVAL_K,
            policy_k: DEFAULT_POLICY_K,
        }
    }
}

/// The full prompt context built for one message, before the final call.
#[derive(Debug, Clone)]
pub struct AssembledPrompt {
    pub features: MessageFeatures,
    pub hits: Vec<RetrievalHit>,
    pub policy_ids: Vec<String>,
    pub bindings: Bindings,
}

pub struct FraudPipeline {
    gateway: LlmGateway,
    store: Arc<EvidenceStore>,
    settings: FraudSettings,
}

impl FraudPipeline {
    pub fn new(gateway: LlmGateway, store: Arc<EvidenceStore>, settings: FraudSettings) -> Result<Self, FraudError> {
        if !(0.0..=1.0).contains(&settings.decision_threshold) {
            return Err(FraudError::InvalidSettings("decision threshold outside [0, 1]".into()));
        }
        if settings.retrieval_k == 0 {
            return Err(FraudError::InvalidSettings("retrieval_k must be at least 1".into()));
        }
        Ok(Self {
            gateway,
            store,
            settings,
        })
    }

    pub fn settings(&self) -> FraudSettings {
        self.settings
    }

    pub fn store(&self) -> &Arc<EvidenceStore> {
        &self.store
    }

    pub fn extract_features(&self, message: &str) -> Result<MessageFeatures, FraudError> {
        if message.trim().is_empty() {
            return Err(FraudError::EmptyMessage);
        }
        let vocabulary = self.store.vocabulary();
        let bindings = Bindings::from([
            ("message".to_string(), message.to_string()),
            ("vocabulary".to_string(), vocabulary.tag_names().collect::<Vec<_>>().join(", ")),
        ]);
        let response = self.gateway.complete_structured(TemplateId::FeatureExtract, &bindings)?;
        let StructuredOutput::Features(raw) = response.parsed else {
            unreachable!("feature_extract parses to Features");
        };
        let mut red_flags = BTreeSet::new();
        let mut dropped_tags = Vec::new();
        for tag in raw.red_flag_candidates {
            match vocabulary.parse(tag.trim()) {
                Ok(flag) => {
                    red_flags.insert(flag);
                }
                Err(_) => {
                    tracing::warn!(tag = %tag, "dropping red-flag tag outside the vocabulary");
                    dropped_tags.push(tag);
                }
            }
        }
        Ok(MessageFeatures {
            intent: raw.intent,
            tone: raw.tone,
            urgency: raw.urgency,
            requested_actions: raw.requested_actions,
            entities: raw.entities,
            contextual_clues: raw.contextual_clues,
            red_flags,
            dropped_tags,
        })
    }

    /// Extract features, retrieve evidence and policies, and build bindings.
    pub fn assemble_prompt(&self, message: &str, mode: RetrievalMode) -> Result<AssembledPrompt, FraudError> {
        let features = self.extract_features(message)?;
        let (hits, policies) = match mode {
            RetrievalMode::Disabled => (Vec::new(), Vec::new()),
            RetrievalMode::Enabled => {
                let flags: Vec<&str> = features.red_flags.iter().map(|f| f.as_str()).collect();
                let query = format!("{message}\n{} {}", features.intent, flags.join(" "));
                let hits = self.store.retrieve_top_k(&query, self.settings.retrieval_k, None)?;
                let policies = self.store.retrieve_policies(&query, self.settings.policy_k)?;
                (hits, policies)
            }
        };
        let evidence = match mode {
            RetrievalMode::Disabled => NO_RAG_MARKER.to_string(),
            RetrievalMode::Enabled => render_evidence(&hits),
        };
        let policy_text = if policies.is_empty() {
            NO_POLICIES_MARKER.to_string()
        } else {
            policies
                .iter()
                .map(|(p, _)| format!("- [{}] {}: {}", p.policy_id, p.title, one_line(&p.text)))
                .collect::<Vec<_>>()
                .join("\n")
        };
        let bindings = Bindings::from([
            ("message".to_string(), message.to_string()),
            ("features".to_string(), render_features(&features)),
            ("evidence".to_string(), evidence),
            ("policies".to_string(), policy_text),
        ]);
        Ok(AssembledPrompt {
            features,
            hits,
            policy_ids: policies.into_iter().map(|(p, _)| p.policy_id.clone()).collect(),
            bindings,
        })
    }

    pub fn assess(&self, message: &str) -> Result<FraudAssessment, FraudError> {
        self.assess_with(message, RetrievalMode::Enabled)
    }

    pub fn assess_with(&self, message: &str, mode: RetrievalMode) -> Result<FraudAssessment, FraudError> {
        let prompt = self.assemble_prompt(message, mode)?;
        let response = self
            .gateway
            .complete_structured(TemplateId::FraudAssess, &prompt.bindings)?;
        let StructuredOutput::Assessment(output) = response.parsed else {
            unreachable!("fraud_assess parses to Assessment");
        };

        let retrieved: BTreeSet<&str> = prompt.hits.iter().map(|h| h.entry.entry_id.as_str()).collect();
        let mut cited_evidence = Vec::new();
        let mut discarded_citations = Vec::new();
        for id in output.cited_evidence {
            if retrieved.contains(id.as_str()) {
                if !cited_evidence.contains(&id) {
                    cited_evidence.push(id);
                }
            } else {
                tracing::warn!(citation = %id, "discarding citation not present in retrieved evidence");
                discarded_citations.push(id);
            }
        }

        let verdict = if output.score >= self.settings.decision_threshold {
            VerdictLabel::Scam
        } else {
            VerdictLabel::Legitimate
        };
        Ok(FraudAssessment {
            message_id: message_id(message),
            score: output.score,
            verdict,
            model_verdict: output.verdict,
            rationale: output.rationale,
            cited_evidence,
            discarded_citations,
            features: prompt.features,
            evidence: prompt
                .hits
                .iter()
                .map(|h| EvidenceRef {
                    entry_id: h.entry.entry_id.clone(),
                    label: h.entry.label,
                    similarity: h.similarity,
                    rank: h.rank,
                })
                .collect(),
            policies: prompt.policy_ids,
            rag_enabled: mode == RetrievalMode::Enabled,
        })
    }
}
