//! OpenAI-compatible chat-completions provider.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{Completion, CompletionRequest, LlmProvider, ProviderError};
use crate::config::Secret;

const SYSTEM_PROMPT: &str =
    "You are a careful assistant inside a security service. Follow the user's formatting instructions exactly.";

#[derive(Clone, Debug)]
pub struct RemoteLlmConfig {
    /// Base URL; `/chat/completions` is appended unless already present.
    pub endpoint: String,
    pub model: String,
    pub credential: Option<Secret>,
    pub timeout: Duration,
    pub temperature: f32,
    /// Send `response_format: {"type": "json_object"}`.
    pub json_mode: bool,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    temperature: f32,
    stream: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    response_format: Option<ResponseFormat>,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ResponseFormat {
    #[serde(rename = "type")]
    kind: &'static str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

pub struct OpenAiCompatibleProvider {
    config: RemoteLlmConfig,
    url: String,
    client: reqwest::blocking::Client,
}

impl OpenAiCompatibleProvider {
    pub fn new(config: RemoteLlmConfig) -> Result<Self, ProviderError> {
        let base = config.endpoint.trim().trim_end_matches('/');
        if base.is_empty() {
            return Err(ProviderError::new("LLM endpoint URL is empty"));
        }
        let url = if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ProviderError::new(e.to_string()))?;
        Ok(Self { config, url, client })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

fn retry_after(response: &reqwest::blocking::Response) -> Option<u64> {
    response
        .headers()
        .get(reqwest::header::RETRY_AFTER)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse().ok())
}

impl LlmProvider for OpenAiCompatibleProvider {
    fn name(&self) -> &str {
        "openai-compatible"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        let body = ChatRequest {
            model: &self.config.model,
            messages: [
                ChatMessage {
                    role: "system",
                    content: SYSTEM_PROMPT,
                },
                ChatMessage {
                    role: "user",
                    content: &request.prompt,
                },
            ],
            temperature: self.config.temperature,
            stream: false,
            response_format: self.config.json_mode.then_some(ResponseFormat {
                kind: "json_object",
            }),
        };
        let mut http = self.client.post(&self.url).json(&body);
        if let Some(secret) = &self.config.credential {
            http = http.bearer_auth(secret.expose());
        }
        let started = Instant::now();
        let response = http.send().map_err(|e| ProviderError {
            reason: format!("request failed: {}", e.without_url()),
            retry_after_secs: Some(5),
        })?;
        let status = response.status();
        if !status.is_success() {
            let transient = status.is_server_error() || status.as_u16() == 429;
            return Err(ProviderError {
                reason: format!("HTTP status {status}"),
                retry_after_secs: retry_after(&response).or(transient.then_some(5)),
            });
        }
        let parsed: ChatResponse = response.json().map_err(|e| ProviderError {
            reason: format!("unreadable completion body: {}", e.without_url()),
            retry_after_secs: None,
        })?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::new("completion has no message content"))?;
        Ok(Completion {
            text,
            latency_ms: Some(started.elapsed().as_millis() as u64),
        })
    }

    fn is_reachable(&self) -> bool {
        // Any HTTP answer at all counts; auth or routing errors still mean the
        // host is up.
        self.client
            .get(&self.url)
            .timeout(Duration::from_secs(3))
            .send()
            .is_ok()
    }
}
