//! Runtime configuration: a TOML file plus environment overrides.
//!
//! Credentials are only ever read from the environment, and are held in
//! [`Secret`], which neither prints nor serialises its contents.

use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::AuthPolicy;
use crate::embedding::{
    EmbedError, Embedder, OfflineEmbedder, RemoteEmbedder, RemoteEmbedderConfig, DEFAULT_OFFLINE_DIMENSION,
};
use crate::llm::{
    GatewaySettings, LlmGateway, LlmProvider, OpenAiCompatibleProvider, RemoteLlmConfig, ScriptedLlm,
    TemplateSet, DEFAULT_MAX_IN_FLIGHT, DEFAULT_REPAIR_RETRIES, DEFAULT_TIMEOUT_SECS,
};

pub const ENV_PREFIX: &str = "SEMGATE_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("invalid config: {0}")]
    Invalid(String),
}

/// A credential. `Debug` and `Display` print `***`.
#[derive(Clone, PartialEq, Eq)]
pub struct Secret(String);

impl Secret {
    pub fn new(value: impl Into<String>) -> Self {
        Self(value.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(***)")
    }
}

impl fmt::Display for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("***")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSection {
    /// Base URL of an OpenAI-compatible API. Unset means the scripted mock.
    pub endpoint: Option<String>,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub repair_retries: u32,
    pub max_in_flight: usize,
    pub temperature: f32,
    pub json_mode: bool,
}

impl Default for LlmSection {
    fn default() -> Self {
        Self {
            endpoint: None,
            model: "llama-3.3-70b-instruct".into(),
            api_key_env: format!("{ENV_PREFIX}LLM_API_KEY"),
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            repair_retries: DEFAULT_REPAIR_RETRIES,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            temperature: 0.0,
            json_mode: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingSection {
    /// Embedding API URL. Unset means the offline hashing embedder.
    pub endpoint: Option<String>,
    pub model: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub offline_dimension: usize,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self {
            endpoint: None,
            model: "all-MiniLM-L6-v2".into(),
            api_key_env: format!("{ENV_PREFIX}EMBED_API_KEY"),
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            offline_dimension: DEFAULT_OFFLINE_DIMENSION,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ApiConfig {
    pub bind: SocketAddr,
    pub data_dir: PathBuf,
    pub policy: AuthPolicy,
    /// Scam verdict threshold on the assessment score.
    pub decision_threshold: f64,
    pub retrieval_k: usize,
    pub policy_k: usize,
    pub cors_allowlist: Vec<String>,
    pub session_ttl_secs: u64,
    /// Include the pass threshold in answer responses (demo use only).
    pub reveal_threshold: bool,
    pub llm: LlmSection,
    pub embedding: EmbeddingSection,
}

impl Default for ApiConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: PathBuf::from("semgate-data"),
            policy: AuthPolicy::default(),
            decision_threshold: 0.5,
            retrieval_k: 5,
            policy_k: 2,
            cors_allowlist: Vec::new(),
            session_ttl_secs: 600,
            reveal_threshold: false,
            llm: LlmSection::default(),
            embedding: EmbeddingSection::default(),
        }
    }
}

impl ApiConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                    path: path.to_path_buf(),
                    source,
                })?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        config.apply_env(|key| std::env::var(key).ok())?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Apply `SEMGATE_*` overrides through `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        let var = |name: &str| lookup(&format!("{ENV_PREFIX}{name}"));
        let parse_err = |name: &str, value: &str| ConfigError::Invalid(format!("{ENV_PREFIX}{name}={value:?}"));
        if let Some(v) = var("BIND") {
            self.bind = v.parse().map_err(|_| parse_err("BIND", &v))?;
        }
        if let Some(v) = var("DATA_DIR") {
            self.data_dir = PathBuf::from(v);
        }
        if let Some(v) = var("LLM_ENDPOINT") {
            self.llm.endpoint = Some(v);
        }
        if let Some(v) = var("LLM_MODEL") {
            self.llm.model = v;
        }
        if let Some(v) = var("EMBED_ENDPOINT") {
            self.embedding.endpoint = Some(v);
        }
        if let Some(v) = var("EMBED_MODEL") {
            self.embedding.model = v;
        }
        if let Some(v) = var("DECISION_THRESHOLD") {
            self.decision_threshold = v.parse().map_err(|_| parse_err("DECISION_THRESHOLD", &v))?;
        }
        if let Some(v) = var("RETRIEVAL_K") {
            self.retrieval_k = v.parse().map_err(|_| parse_err("RETRIEVAL_K", &v))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.policy
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.decision_threshold) {
            return Err(ConfigError::Invalid("decision_threshold outside [0, 1]".into()));
        }
        if self.retrieval_k == 0 {
            return Err(ConfigError::Invalid("retrieval_k must be at least 1".into()));
        }
        Ok(())
    }

    /// Provider for this configuration; `mock` forces the scripted one.
    pub fn llm_provider(&self, mock: bool) -> Result<Arc<dyn LlmProvider>, ConfigError> {
        match (&self.llm.endpoint, mock) {
            (Some(endpoint), false) => {
                let provider = OpenAiCompatibleProvider::new(RemoteLlmConfig {
                    endpoint: endpoint.clone(),
                    model: self.llm.model.clone(),
                    credential: std::env::var(&self.llm.api_key_env).ok().map(Secret::new),
                    timeout: Duration::from_secs(self.llm.timeout_secs),
                    temperature: self.llm.temperature,
                    json_mode: self.llm.json_mode,
                })
                .map_err(|e| ConfigError::Invalid(e.reason))?;
                Ok(Arc::new(provider))
            }
            _ => Ok(Arc::new(ScriptedLlm::new())),
        }
    }

    pub fn gateway(&self, provider: Arc<dyn LlmProvider>) -> LlmGateway {
        LlmGateway::with_settings(
            provider,
            TemplateSet::bundled(),
            GatewaySettings {
                repair_retries: self.llm.repair_retries,
                max_in_flight: self.llm.max_in_flight,
            },
        )
    }

    pub fn embedder(&self, mock: bool) -> Result<Arc<dyn Embedder>, ConfigError> {
        let invalid = |e: EmbedError| ConfigError::Invalid(e.to_string());
        match (&self.embedding.endpoint, mock) {
            (Some(endpoint), false) => Ok(Arc::new(
                RemoteEmbedder::new(RemoteEmbedderConfig {
                    endpoint: endpoint.clone(),
                    model: self.embedding.model.clone(),
                    credential: std::env::var(&self.embedding.api_key_env).ok().map(Secret::new),
                    timeout: Duration::from_secs(self.embedding.timeout_secs),
                })
                .map_err(invalid)?,
            )),
            _ => Ok(Arc::new(
                OfflineEmbedder::new(self.embedding.offline_dimension).map_err(invalid)?,
            )),
        }
    }
}
