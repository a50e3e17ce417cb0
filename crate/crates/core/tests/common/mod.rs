//! Shared helpers for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use semgate::api::{AppState, LogSink, SharedBuffer};
use semgate::config::ApiConfig;
use semgate::embedding::{Embedder, OfflineEmbedder};
use semgate::fixtures;
use semgate::llm::{Completion, CompletionRequest, LlmProvider, ProviderError, ScriptedLlm, TemplateId};
use semgate::store::EvidenceStore;

pub fn offline() -> Arc<dyn Embedder> {
    Arc::new(OfflineEmbedder::default())
}

pub fn seeded_store() -> Arc<EvidenceStore> {
    Arc::new(fixtures::seeded_store(offline()).expect("bundled fixtures load"))
}

/// Scripted provider whose generated answers are unique opaque tokens, so a
/// capture can be scanned for them without false hits from question text.
#[derive(Default)]
pub struct OpaqueAnswers {
    inner: ScriptedLlm,
    counter: AtomicU64,
    issued: Mutex<BTreeSet<String>>,
}

impl OpaqueAnswers {
    pub fn issued(&self) -> BTreeSet<String> {
        self.issued.lock().clone()
    }
}

impl LlmProvider for OpaqueAnswers {
    fn name(&self) -> &str {
        "opaque-answers"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        if request.template_id != TemplateId::QuestionGen {
            return self.inner.complete(request);
        }
        let count: usize = request.bindings["count"].trim().parse().expect("count binding");
        let pairs: Vec<_> = (0..count)
            .map(|_| {
                let n = self.counter.fetch_add(1, Ordering::SeqCst);
                let answer = format!("qzv{n:05}kx");
                self.issued.lock().insert(answer.clone());
                serde_json::json!({
                    "question": format!("Which code word was recorded as detail number {n}?"),
                    "answer": answer,
                })
            })
            .collect();
        Ok(Completion::text(serde_json::json!({ "pairs": pairs }).to_string()))
    }
}

/// Scripted provider whose judge rejects every answer.
#[derive(Default)]
pub struct RejectingJudge(ScriptedLlm);

impl LlmProvider for RejectingJudge {
    fn name(&self) -> &str {
        "rejecting-judge"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        if request.template_id == TemplateId::AnswerJudge {
            return Ok(Completion::text(r#"{"accept": false, "rationale": "not convinced"}"#));
        }
        self.0.complete(request)
    }
}

/// App state over the bundled store with a request log captured in memory.
pub fn app_with(config: ApiConfig, provider: Arc<dyn LlmProvider>) -> (AppState, SharedBuffer) {
    let buffer = SharedBuffer::default();
    let state = AppState::new(config, provider, seeded_store(), LogSink::new(buffer.clone()))
        .expect("valid app state");
    (state, buffer)
}

pub fn mock_app() -> (AppState, SharedBuffer) {
    app_with(ApiConfig::default(), Arc::new(ScriptedLlm::new()))
}
