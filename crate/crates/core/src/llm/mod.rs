//! One contract for every LLM call the system makes.
//!
//! [`LlmGateway`] renders a [`TemplateId`]'s prompt, sends it to an
//! [`LlmProvider`], and parses the reply strictly against that template's
//! output schema. Replies that fail to parse or validate trigger a repair
//! retry (the original prompt plus a correction notice), up to
//! `repair_retries` extra attempts. A reply that never parses surfaces as
//! [`LlmError::MalformedOutput`]; nothing is ever guessed.

mod output;
mod remote;
mod scripted;
mod template;

use std::sync::Arc;
use std::time::Instant;

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use output::{
    parse_output, AssessmentOutput, FeatureOutput, JudgeVerdict, QaPair, StructuredOutput, Urgency,
    VerdictLabel,
};
pub use remote::{OpenAiCompatibleProvider, RemoteLlmConfig};
pub use scripted::{
    ExactMatchJudge, FixedReply, GenerationBias, HostileProvider, JunkFirst, ScriptedLlm,
    UnavailableProvider, FABRICATED_ID_PREFIX, MOCK_STOP_WORDS,
};
pub use template::{Bindings, PromptTemplate, TemplateId, TemplateSet, JUDGE_INSTRUCTION, TEMPLATE_VERSION};

use crate::segment::DocumentSegment;

pub const DEFAULT_REPAIR_RETRIES: u32 = 2;
pub const DEFAULT_TIMEOUT_SECS: u64 = 30;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("template {template} requires placeholder {name:?}")]
    MissingPlaceholder { template: TemplateId, name: String },

    #[error("LLM provider unavailable: {reason}")]
    ProviderUnavailable {
        reason: String,
        retry_after_secs: Option<u64>,
    },

    #[error("malformed {template} output after {attempts} attempt(s): {detail}")]
    MalformedOutput {
        template: TemplateId,
        attempts: u32,
        detail: String,
    },
}

/// Transport-level failure reported by a provider.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderError {
    pub reason: String,
    pub retry_after_secs: Option<u64>,
}

impl ProviderError {
    pub fn new(reason: impl Into<String>) -> Self {
        Self {
            reason: reason.into(),
            retry_after_secs: None,
        }
    }
}

impl From<ProviderError> for LlmError {
    fn from(e: ProviderError) -> Self {
        LlmError::ProviderUnavailable {
            reason: e.reason,
            retry_after_secs: e.retry_after_secs,
        }
    }
}

/// What a provider sees for one attempt.
#[derive(Debug, Clone)]
pub struct CompletionRequest {
    pub template_id: TemplateId,
    /// Fully rendered prompt, including any repair notice.
    pub prompt: String,
    /// The bindings the prompt was rendered from.
    pub bindings: Bindings,
    /// 1-based attempt number.
    pub attempt: u32,
}

#[derive(Debug, Clone)]
pub struct Completion {
    pub text: String,
    /// Provider-reported latency; the gateway measures wall time when absent.
    pub latency_ms: Option<u64>,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            latency_ms: None,
        }
    }
}

pub trait LlmProvider: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError>;

    /// Cheap reachability probe used by health checks.
    fn is_reachable(&self) -> bool {
        true
    }
}

impl<P: LlmProvider + ?Sized> LlmProvider for Arc<P> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        (**self).complete(request)
    }

    fn is_reachable(&self) -> bool {
        (**self).is_reachable()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LlmResponse {
    pub template_id: TemplateId,
    pub raw_text: String,
    pub parsed: StructuredOutput,
    pub provider_latency_ms: u64,
    pub attempt_count: u32,
}

/// A generated challenge with the segment it was drawn from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedQuestion {
    pub question: String,
    pub reference_answer: String,
    pub segment_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GatewaySettings {
    pub repair_retries: u32,
    pub max_in_flight: usize,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        Self {
            repair_retries: DEFAULT_REPAIR_RETRIES,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

struct InFlight {
    cap: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut used = self.used.lock();
        while *used >= self.cap {
            self.freed.wait(&mut used);
        }
        *used += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.used.lock() -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Clone)]
pub struct LlmGateway {
    provider: Arc<dyn LlmProvider>,
    templates: Arc<TemplateSet>,
    settings: GatewaySettings,
    in_flight: Arc<InFlight>,
}

impl std::fmt::Debug for LlmGateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmGateway")
            .field("provider", &self.provider.name())
            .field("settings", &self.settings)
            .finish()
    }
}

impl LlmGateway {
    pub fn new(provider: Arc<dyn LlmProvider>) -> Self {
        Self::with_settings(provider, TemplateSet::bundled(), GatewaySettings::default())
    }

    pub fn with_settings(
        provider: Arc<dyn LlmProvider>,
        templates: TemplateSet,
        settings: GatewaySettings,
    ) -> Self {
        let cap = settings.max_in_flight.max(1);
        Self {
            provider,
            templates: Arc::new(templates),
            settings,
            in_flight: Arc::new(InFlight {
                cap,
                used: Mutex::new(0),
                freed: Condvar::new(),
            }),
        }
    }

    pub fn provider(&self) -> &Arc<dyn LlmProvider> {
        &self.provider
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn settings(&self) -> GatewaySettings {
        self.settings
    }

    /// Render, call, parse, and repair-retry.
    pub fn complete_structured(
        &self,
        template_id: TemplateId,
        bindings: &Bindings,
    ) -> Result<LlmResponse, LlmError> {
        let base_prompt = self.templates.get(template_id).render(bindings)?;
        let max_attempts = self.settings.repair_retries + 1;
        let mut prompt = base_prompt.clone();
        let mut last_error = String::new();
        for attempt in 1..=max_attempts {
            let request = CompletionRequest {
                template_id,
                prompt: prompt.clone(),
                bindings: bindings.clone(),
                attempt,
            };
            let started = Instant::now();
            let completion = {
                let _permit = self.in_flight.acquire();
                self.provider.complete(&request)?
            };
            let latency = completion
                .latency_ms
                .unwrap_or_else(|| started.elapsed().as_millis() as u64);
            match parse_output(template_id, &completion.text, bindings) {
                Ok(parsed) => {
                    return Ok(LlmResponse {
                        template_id,
                        raw_text: completion.text,
                        parsed,
                        provider_latency_ms: latency,
                        attempt_count: attempt,
                    })
                }
                Err(detail) => {
                    tracing::warn!(
                        template = %template_id,
                        attempt,
                        provider = self.provider.name(),
                        "unparseable LLM output: {detail}"
                    );
                    last_error = detail;
                    prompt = format!(
                        "{base_prompt}\n\nYour previous reply could not be used ({last_error}). \
                         Reply again with JSON only, matching the requested shape exactly."
                    );
                }
            }
        }
        Err(LlmError::MalformedOutput {
            template: template_id,
            attempts: max_attempts,
            detail: last_error,
        })
    }

    /// Generate `count` question/answer pairs from one segment.
    pub fn generate_questions(
        &self,
        segment: &DocumentSegment,
        count: usize,
        avoid: &[String],
    ) -> Result<Vec<GeneratedQuestion>, LlmError> {
        if count == 0 {
            return Err(LlmError::InvalidRequest("question count must be at least 1".into()));
        }
        if segment.text.trim().is_empty() {
            return Err(LlmError::InvalidRequest("segment text is empty".into()));
        }
        let avoid_text = if avoid.is_empty() {
            "(none)".to_string()
        } else {
            avoid.iter().map(|q| format!("- {q}")).collect::<Vec<_>>().join("\n")
        };
        let bindings = Bindings::from([
            ("segment_text".to_string(), segment.text.clone()),
            ("count".to_string(), count.to_string()),
            ("avoid".to_string(), avoid_text),
        ]);
        let response = self.complete_structured(TemplateId::QuestionGen, &bindings)?;
        let StructuredOutput::Questions(pairs) = response.parsed else {
            unreachable!("question_gen parses to Questions");
        };
        Ok(pairs
            .into_iter()
            .map(|p| GeneratedQuestion {
                question: p.question,
                reference_answer: p.answer,
                segment_index: segment.segment_index,
            })
            .collect())
    }

    /// Ask the provider whether `user_answer` should be accepted.
    pub fn judge_answer(
        &self,
        question: &str,
        reference_answer: &str,
        user_answer: &str,
    ) -> Result<JudgeVerdict, LlmError> {
        for (name, value) in [
            ("question", question),
            ("reference_answer", reference_answer),
            ("user_answer", user_answer),
        ] {
            if value.trim().is_empty() {
                return Err(LlmError::InvalidRequest(format!("{name} is empty")));
            }
        }
        let bindings = Bindings::from([
            ("question".to_string(), question.to_string()),
            ("reference_answer".to_string(), reference_answer.to_string()),
            ("user_answer".to_string(), user_answer.to_string()),
        ]);
        let response = self.complete_structured(TemplateId::AnswerJudge, &bindings)?;
        let StructuredOutput::Verdict(verdict) = response.parsed else {
            unreachable!("answer_judge parses to Verdict");
        };
        Ok(verdict)
    }
}
