//! HTTP/JSON service under `/v1`.
//!
//! | method | path | body |
//! |---|---|---|
//! | POST | `/v1/auth/sessions` | `{user_id, document?}` |
//! | POST | `/v1/auth/sessions/{id}/answers` | `{item_id, answer}` |
//! | GET | `/v1/auth/sessions/{id}` | |
//! | POST | `/v1/fraud/assessments` | `{message, rag_enabled?}` |
//! | POST | `/v1/corpus/entries` | one entry, an array, or JSON lines |
//! | GET | `/v1/corpus/entries?tag=&label=&limit=&offset=` | |
//! | GET | `/v1/healthz` | |
//!
//! Reference answers never leave the server. Engine calls run on the
//! blocking pool because providers are synchronous.

use std::collections::HashMap;
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::auth::{AuthEngine, AuthError, AuthSession, ChallengeItem, Outcome};
use crate::config::{ApiConfig, ConfigError};
use crate::embedding::Embedder;
use crate::fraud::{FraudError, FraudPipeline, FraudSettings, RetrievalMode};
use crate::llm::{LlmError, LlmProvider};
use crate::segment::UserDocument;
use crate::store::{parse_jsonl, CorpusRecord, EntryFilter, EvidenceStore, ImportOptions, Label, StoreError};
use crate::vocab::RedFlagVocabulary;

const MAX_PAGE: usize = 500;

/// An error rendered as `{"error": {"code", "message"}}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub retry_after_secs: Option<u64>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            retry_after_secs: None,
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "malformed_request", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn unavailable(reason: String, retry_after_secs: Option<u64>) -> Self {
        Self {
            status: StatusCode::BAD_GATEWAY,
            code: "provider_unavailable",
            message: reason,
            retry_after_secs: Some(retry_after_secs.unwrap_or(5)),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Json(json!({ "error": { "code": self.code, "message": self.message } }));
        let mut response = (self.status, body).into_response();
        if let Some(secs) = self.retry_after_secs {
            response
                .headers_mut()
                .insert(header::RETRY_AFTER, HeaderValue::from(secs));
        }
        response
    }
}

impl From<LlmError> for ApiError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::ProviderUnavailable {
                reason,
                retry_after_secs,
            } => ApiError::unavailable(reason, retry_after_secs),
            LlmError::MalformedOutput { .. } => {
                ApiError::new(StatusCode::BAD_GATEWAY, "malformed_provider_output", e.to_string())
            }
            other => ApiError::bad_request(other.to_string()),
        }
    }
}

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> Self {
        match e {
            AuthError::UnknownItem(_) => ApiError::not_found(e.to_string()),
            AuthError::ItemNotPending(_) | AuthError::SessionClosed(_) | AuthError::RoundIncomplete(_) => {
                ApiError::new(StatusCode::CONFLICT, "conflict", e.to_string())
            }
            AuthError::ProviderUnavailable {
                reason,
                retry_after_secs,
            } => ApiError::unavailable(reason, retry_after_secs),
            AuthError::Llm(inner) => inner.into(),
            AuthError::EmptyDocument => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "empty_document", e.to_string())
            }
            other => ApiError::bad_request(other.to_string()),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownRedFlagTag(_) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "unknown_red_flag_tag", e.to_string())
            }
            StoreError::ModelLabelRejected(_) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "model_label_rejected", e.to_string())
            }
            // Import errors carry the underlying cause as text after the line number.
            StoreError::Line { ref message, .. } if message.contains("unknown red-flag tag") => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "unknown_red_flag_tag", e.to_string())
            }
            StoreError::Line { ref message, .. } if message.contains("model-labelled") => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "model_label_rejected", e.to_string())
            }
            StoreError::InvalidEntry(_) | StoreError::InvalidArgument(_) | StoreError::Line { .. } => {
                ApiError::bad_request(e.to_string())
            }
            StoreError::Embed(crate::embedding::EmbedError::ProviderUnavailable {
                reason,
                retry_after_secs,
            }) => ApiError::unavailable(reason, retry_after_secs),
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<FraudError> for ApiError {
    fn from(e: FraudError) -> Self {
        match e {
            FraudError::EmptyMessage | FraudError::InvalidSettings(_) => ApiError::bad_request(e.to_string()),
            FraudError::Llm(inner) => inner.into(),
            FraudError::Store(inner) => inner.into(),
        }
    }
}

/// Where structured request logs go, one JSON object per line.
#[derive(Clone)]
pub struct LogSink(Arc<Mutex<Box<dyn Write + Send>>>);

impl LogSink {
    pub fn new(writer: impl Write + Send + 'static) -> Self {
        Self(Arc::new(Mutex::new(Box::new(writer))))
    }

    pub fn stderr() -> Self {
        Self::new(std::io::stderr())
    }

    pub fn discard() -> Self {
        Self::new(std::io::sink())
    }

    fn write_line(&self, value: &serde_json::Value) {
        let mut w = self.0.lock();
        let _ = writeln!(w, "{value}");
        let _ = w.flush();
    }
}

/// A shared in-memory buffer, handy as a [`LogSink`] in tests.
#[derive(Clone, Default)]
pub struct SharedBuffer(pub Arc<Mutex<Vec<u8>>>);

impl SharedBuffer {
    pub fn contents(&self) -> String {
        String::from_utf8_lossy(&self.0.lock()).into_owned()
    }
}

impl Write for SharedBuffer {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

struct SessionSlot {
    session: Arc<Mutex<AuthSession>>,
    touched: Instant,
}

struct Inner {
    config: ApiConfig,
    auth: AuthEngine,
    fraud: Arc<FraudPipeline>,
    store: Arc<EvidenceStore>,
    provider: Arc<dyn LlmProvider>,
    sessions: Mutex<HashMap<String, SessionSlot>>,
    persist_dir: Option<PathBuf>,
    log: LogSink,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(
        config: ApiConfig,
        provider: Arc<dyn LlmProvider>,
        store: Arc<EvidenceStore>,
        log: LogSink,
    ) -> Result<Self, ConfigError> {
        config.validate()?;
        let gateway = config.gateway(provider.clone());
        let auth = AuthEngine::new(gateway.clone(), store.embedder().clone());
        let fraud = FraudPipeline::new(
            gateway,
            store.clone(),
            FraudSettings {
                decision_threshold: config.decision_threshold,
                retrieval_k: config.retrieval_k,
                policy_k: config.policy_k,
            },
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(Self(Arc::new(Inner {
            config,
            auth,
            fraud: Arc::new(fraud),
            store,
            provider,
            sessions: Mutex::new(HashMap::new()),
            persist_dir: None,
            log,
        })))
    }

    /// Build providers from `config`, open the store in its data dir, and
    /// persist corpus writes back there.
    pub fn from_config(config: ApiConfig, mock: bool, log: LogSink) -> Result<Self, ConfigError> {
        let provider = config.llm_provider(mock)?;
        let embedder: Arc<dyn Embedder> = config.embedder(mock)?;
        let store = EvidenceStore::open(&config.data_dir, embedder, RedFlagVocabulary::bundled())
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let dir = config.data_dir.clone();
        let mut state = Self::new(config, provider, Arc::new(store), log)?;
        Arc::get_mut(&mut state.0).expect("state not yet shared").persist_dir = Some(dir);
        Ok(state)
    }

    pub fn store(&self) -> &Arc<EvidenceStore> {
        &self.0.store
    }

    pub fn config(&self) -> &ApiConfig {
        &self.0.config
    }

    fn ttl(&self) -> Duration {
        Duration::from_secs(self.0.config.session_ttl_secs)
    }

    fn insert_session(&self, session: AuthSession) -> Arc<Mutex<AuthSession>> {
        let id = session.session_id.clone();
        let shared = Arc::new(Mutex::new(session));
        let mut sessions = self.0.sessions.lock();
        let ttl = self.ttl();
        sessions.retain(|_, slot| slot.touched.elapsed() < ttl);
        sessions.insert(
            id,
            SessionSlot {
                session: shared.clone(),
                touched: Instant::now(),
            },
        );
        shared
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<AuthSession>>, ApiError> {
        let mut sessions = self.0.sessions.lock();
        let ttl = self.ttl();
        sessions.retain(|_, slot| slot.touched.elapsed() < ttl);
        let slot = sessions
            .get_mut(id)
            .ok_or_else(|| ApiError::not_found(format!("unknown or expired session {id}")))?;
        slot.touched = Instant::now();
        Ok(slot.session.clone())
    }

    fn persist(&self) -> Result<(), ApiError> {
        if let Some(dir) = &self.0.persist_dir {
            self.0.store.save(dir)?;
        }
        Ok(())
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

/// Describes a JSON error by kind and position only; serde's own message can
/// quote request values back.
fn json_error(e: &serde_json::Error) -> ApiError {
    let kind = match e.classify() {
        serde_json::error::Category::Io => "unreadable",
        serde_json::error::Category::Syntax => "syntax error",
        serde_json::error::Category::Data => "unexpected shape",
        serde_json::error::Category::Eof => "truncated",
    };
    ApiError::bad_request(format!("invalid JSON body: {kind} at line {} column {}", e.line(), e.column()))
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| json_error(&e))
}

#[derive(Deserialize)]
struct CreateSessionRequest {
    user_id: String,
    /// Inline document text; otherwise the user's stored document is used.
    #[serde(default)]
    document: Option<String>,
}

#[derive(Serialize)]
struct QuestionView {
    item_id: String,
    question: String,
}

/// An item as clients may see it.
#[derive(Serialize)]
struct ItemView {
    item_id: String,
    question: String,
    segment_index: usize,
    outcome: Outcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    similarity: Option<f64>,
}

impl From<&ChallengeItem> for ItemView {
    fn from(item: &ChallengeItem) -> Self {
        Self {
            item_id: item.item_id.clone(),
            question: item.question.clone(),
            segment_index: item.segment_index,
            outcome: item.outcome,
            similarity: item.similarity,
        }
    }
}

fn next_question(session: &AuthSession) -> Option<QuestionView> {
    session.current_item().map(|i| QuestionView {
        item_id: i.item_id.clone(),
        question: i.question.clone(),
    })
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let request: CreateSessionRequest = parse_body(&body)?;
    if request.user_id.trim().is_empty() {
        return Err(ApiError::bad_request("user_id is empty"));
    }
    let s = state.clone();
    let session = blocking(move || {
        let doc = match request.document {
            Some(text) => UserDocument::new("inline", request.user_id.clone(), text),
            None => s
                .0
                .store
                .document_for_user(&request.user_id)
                .ok_or_else(|| ApiError::not_found(format!("no document on file for user {}", request.user_id)))?,
        };
        Ok(s.0.auth.start_session(&request.user_id, &doc, s.0.config.policy.clone())?)
    })
    .await?;
    let first = next_question(&session);
    let body = json!({
        "session_id": session.session_id,
        "round_index": session.round_index,
        "questions_per_round": session.questions_per_round,
        "passing_requirement": session.policy.passing_requirement,
        "verdict": session.verdict,
        "item_id": first.as_ref().map(|q| q.item_id.clone()),
        "question": first.as_ref().map(|q| q.question.clone()),
    });
    state.insert_session(session);
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

#[derive(Deserialize)]
struct AnswerRequest {
    item_id: String,
    answer: String,
}

async fn submit_answer(
    State(state): State<AppState>,
    Path(session_id): Path<String>,
    body: Bytes,
) -> Result<Json<serde_json::Value>, ApiError> {
    let request: AnswerRequest = parse_body(&body)?;
    let shared = state.session(&session_id)?;
    let s = state.clone();
    blocking(move || {
        let mut session = shared.lock();
        let item = s.0.auth.evaluate_answer(&mut session, &request.item_id, &request.answer)?;
        if session.round_complete() {
            s.0.auth.conclude_round(&mut session)?;
        }
        let next = match next_question(&session) {
            Some(q) if !session.verdict.is_terminal() => json!({ "type": "question", "item_id": q.item_id, "question": q.question }),
            _ => json!({ "type": "verdict", "verdict": session.verdict }),
        };
        let mut body = json!({
            "item_id": item.item_id,
            "outcome": item.outcome,
            "similarity": item.similarity,
            "round_index": session.round_index,
            "pass_count": session.pass_count(),
            "verdict": session.verdict,
            "next": next,
        });
        if s.0.config.reveal_threshold {
            body["cosine_threshold"] = json!(session.policy.cosine_threshold);
        }
        Ok(Json(body))
    })
    .await
}

async fn get_session(
    State(state): State<AppState>,
    Path(session_id): Path<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let shared = state.session(&session_id)?;
    let session = shared.lock();
    let items: Vec<ItemView> = session.items.iter().map(ItemView::from).collect();
    Ok(Json(json!({
        "session_id": session.session_id,
        "user_id": session.user_id,
        "round_index": session.round_index,
        "questions_per_round": session.questions_per_round,
        "passing_requirement": session.policy.passing_requirement,
        "max_attempts": session.policy.max_attempts,
        "pass_count": session.pass_count(),
        "verdict": session.verdict,
        "items": items,
    })))
}

#[derive(Deserialize)]
struct AssessRequest {
    message: String,
    #[serde(default = "default_true")]
    rag_enabled: bool,
}

fn default_true() -> bool {
    true
}

async fn assess(State(state): State<AppState>, body: Bytes) -> Result<Json<serde_json::Value>, ApiError> {
    let request: AssessRequest = parse_body(&body)?;
    let pipeline = state.0.fraud.clone();
    let mode = if request.rag_enabled {
        RetrievalMode::Enabled
    } else {
        RetrievalMode::Disabled
    };
    let assessment = blocking(move || Ok(pipeline.assess_with(&request.message, mode)?)).await?;
    Ok(Json(serde_json::to_value(assessment).map_err(|e| ApiError::internal(e.to_string()))?))
}

/// Accepts one JSON object, a JSON array, or JSON lines.
fn parse_corpus_body(headers: &HeaderMap, body: &Bytes) -> Result<Vec<CorpusRecord>, ApiError> {
    let ndjson = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("ndjson") || v.contains("jsonl"));
    if !ndjson {
        match serde_json::from_slice::<serde_json::Value>(body) {
            Ok(serde_json::Value::Array(items)) => {
                return items
                    .into_iter()
                    .enumerate()
                    .map(|(i, v)| {
                        serde_json::from_value(v).map_err(|e| {
                            let mut err = json_error(&e);
                            err.message = format!("entry {}: {}", i + 1, err.message);
                            err
                        })
                    })
                    .collect()
            }
            Ok(value) => {
                return Ok(vec![serde_json::from_value(value).map_err(|e| json_error(&e))?])
            }
            Err(_) if !body.contains(&b'\n') => {
                return Err(ApiError::bad_request("body is not JSON"));
            }
            Err(_) => {}
        }
    }
    Ok(parse_jsonl::<CorpusRecord>(&body[..])
        .map_err(|e| ApiError::bad_request(e.to_string()))?
        .into_iter()
        .map(|(_, r)| r)
        .collect())
}

async fn add_entries(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let records = parse_corpus_body(&headers, &body)?;
    if records.is_empty() {
        return Err(ApiError::bad_request("no entries in body"));
    }
    let s = state.clone();
    let ids = blocking(move || {
        let jsonl: String = records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serialises") + "\n")
            .collect();
        let ids = s.0.store.import_jsonl(jsonl.as_bytes(), ImportOptions::default())?;
        s.persist()?;
        Ok(ids)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(json!({ "stored": ids }))).into_response())
}

#[derive(Deserialize)]
struct ListQuery {
    tag: Option<String>,
    label: Option<String>,
    limit: Option<usize>,
    offset: Option<usize>,
}

async fn list_entries(
    State(state): State<AppState>,
    Query(query): Query<ListQuery>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let label = match query.label.as_deref() {
        None | Some("") => None,
        Some("scam") => Some(Label::Scam),
        Some("legitimate") => Some(Label::Legitimate),
        Some(other) => return Err(ApiError::bad_request(format!("unknown label {other:?}"))),
    };
    if let Some(tag) = query.tag.as_deref() {
        if !state.0.store.vocabulary().contains(tag) {
            return Err(StoreError::UnknownRedFlagTag(tag.to_string()).into());
        }
    }
    let limit = query.limit.unwrap_or(50).min(MAX_PAGE);
    let offset = query.offset.unwrap_or(0);
    let (entries, total) = state.0.store.list(&EntryFilter { label, tag: query.tag }, offset, limit);
    let entries: Vec<CorpusRecord> = entries.iter().map(|e| e.record()).collect();
    Ok(Json(json!({ "total": total, "offset": offset, "limit": limit, "entries": entries })))
}

async fn healthz(State(state): State<AppState>) -> Json<serde_json::Value> {
    let provider = state.0.provider.clone();
    let reachable = tokio::task::spawn_blocking(move || provider.is_reachable())
        .await
        .unwrap_or(false);
    Json(json!({
        "status": "ok",
        "provider": state.0.provider.name(),
        "provider_reachable": reachable,
        "embedder": state.0.store.embedder().id(),
        "corpus_entries": state.0.store.len(),
    }))
}

async fn request_log(State(state): State<AppState>, request: Request, next: Next) -> Response {
    let started = Instant::now();
    let method = request.method().clone();
    let path = request.uri().path().to_string();
    let response = next.run(request).await;
    state.0.log.write_line(&json!({
        "ts": chrono::Utc::now().to_rfc3339(),
        "method": method.as_str(),
        "path": path,
        "status": response.status().as_u16(),
        "latency_ms": started.elapsed().as_millis() as u64,
    }));
    response
}

async fn cors(State(state): State<AppState>, request: Request, next: Next) -> Response {
    let allowlist = &state.0.config.cors_allowlist;
    let origin = request
        .headers()
        .get(header::ORIGIN)
        .and_then(|v| v.to_str().ok())
        .filter(|o| allowlist.iter().any(|a| a == "*" || a == o))
        .map(str::to_string);
    let preflight = request.method() == Method::OPTIONS;
    let mut response = if preflight {
        StatusCode::NO_CONTENT.into_response()
    } else {
        next.run(request).await
    };
    if let Some(origin) = origin.and_then(|o| HeaderValue::from_str(&o).ok()) {
        let h = response.headers_mut();
        h.insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, origin);
        h.insert(header::VARY, HeaderValue::from_static("Origin"));
        h.insert(header::ACCESS_CONTROL_ALLOW_METHODS, HeaderValue::from_static("GET, POST, OPTIONS"));
        h.insert(header::ACCESS_CONTROL_ALLOW_HEADERS, HeaderValue::from_static("content-type"));
    }
    response
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/auth/sessions", post(create_session))
        .route("/v1/auth/sessions/{id}", get(get_session))
        .route("/v1/auth/sessions/{id}/answers", post(submit_answer))
        .route("/v1/fraud/assessments", post(assess))
        .route("/v1/corpus/entries", post(add_entries).get(list_entries))
        .route("/v1/healthz", get(healthz))
        .layer(middleware::from_fn_with_state(state.clone(), cors))
        .layer(middleware::from_fn_with_state(state.clone(), request_log))
        .with_state(state)
}

/// Bind and serve until Ctrl-C.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

