//! The HTTP API driven in-process, then optionally served.
//!
//! Run: `cargo run -p semgate --example api_server` (add `-- --serve` to
//! listen on 127.0.0.1:8080 afterwards).

use std::sync::Arc;

use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use semgate::api::{router, serve, AppState, LogSink};
use semgate::config::ApiConfig;
use semgate::embedding::OfflineEmbedder;
use semgate::fixtures;
use semgate::llm::ScriptedLlm;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> Value {
    let request = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))
        .expect("request");
    let response = app.clone().oneshot(request).await.expect("router is infallible");
    let status = response.status();
    let bytes = response.into_body().collect().await.expect("body").to_bytes();
    let value: Value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    println!("{method} {uri} -> {status}\n{}", serde_json::to_string_pretty(&value).expect("json"));
    value
}

#[tokio::main]
async fn main() {
    let store = fixtures::seeded_store(Arc::new(OfflineEmbedder::default())).expect("fixtures load");
    let state = AppState::new(ApiConfig::default(), Arc::new(ScriptedLlm::new()), Arc::new(store), LogSink::stderr())
        .expect("valid config");
    let app = router(state.clone());

    call(&app, "GET", "/v1/healthz", None).await;
    let session = call(&app, "POST", "/v1/auth/sessions", Some(json!({ "user_id": "maria" }))).await;
    let uri = format!("/v1/auth/sessions/{}/answers", session["session_id"].as_str().expect("id"));
    let item = session["item_id"].as_str().expect("first item");
    call(&app, "POST", &uri, Some(json!({ "item_id": item, "answer": "not sure" }))).await;
    call(
        &app,
        "POST",
        "/v1/fraud/assessments",
        Some(json!({ "message": "Your parcel is held. Pay the customs fee at http://bit.ly/x today." })),
    )
    .await;

    if std::env::args().any(|a| a == "--serve") {
        let addr = state.config().bind;
        println!("listening on {addr}");
        serve(state, addr).await.expect("server");
    }
}
