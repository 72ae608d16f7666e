//! Chat-completion client with interchangeable backends.
//!
//! * `http`: a chat-completions endpoint (`POST …/chat/completions`),
//!   optionally filling and reading a replay cache.
//! * `replay`: answers only from the replay cache; a miss is an error.
//! * `scripted`: a fixed digest → response map loaded from JSON.
//!
//! All three are addressed by [`request_digest`], a SHA-256 over a canonical
//! serialization of the request.

mod cache;
mod http;

pub use cache::{CacheEntry, ReplayCache};
pub use http::HttpBackend;

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_API_KEY_ENV: &str = "REAMS_API_KEY";
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("HTTP {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response body: {0}")]
    MalformedResponse(String),
    #[error("replay cache miss for digest {0}")]
    CacheMiss(String),
    #[error("no scripted response for digest {0}")]
    ScriptMiss(String),
    #[error("cache io at {path}: {source}")]
    CacheIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub model_id: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
}

impl ModelRequest {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.messages.is_empty() {
            return Err(ModelError::InvalidRequest("at least one message is required".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(ModelError::InvalidRequest(format!("bad temperature {}", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(ModelError::InvalidRequest("max_tokens must be at least 1".into()));
        }
        Ok(())
    }

    /// The request as a canonical JSON value (digest input and cache key).
    pub fn canonical_value(&self) -> Value {
        serde_json::json!({
            "model_id": self.model_id,
            "messages": self.messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "stop": self.stop,
        })
    }
}

/// Serializes with object keys sorted at every level and no whitespace.
pub fn canonical_json(v: &Value) -> String {
    let mut out = String::new();
    write_canonical(v, &mut out);
    out
}

fn write_canonical(v: &Value, out: &mut String) {
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        scalar => out.push_str(&scalar.to_string()),
    }
}

/// Hex SHA-256 of the canonical request.
pub fn request_digest(req: &ModelRequest) -> String {
    hex::encode(Sha256::digest(canonical_json(&req.canonical_value()).as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub latency: Duration,
    pub from_cache: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Replay,
    Scripted,
}

/// Decoding defaults for one model role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ModelSettings {
    pub fn code_default() -> Self {
        Self { model_id: "codellama-13b-instruct".into(), temperature: 0.0, max_tokens: 1024 }
    }

    pub fn reasoning_default() -> Self {
        Self { model_id: "llama-3.1-8b-instruct".into(), temperature: 0.2, max_tokens: 1024 }
    }
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Duration::try_from_secs_f64(f64::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub base_url: Option<String>,
    pub api_key_env: String,
    #[serde(rename = "request_timeout_s", with = "secs")]
    pub request_timeout: Duration,
    pub max_retries: u32,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Response map for `scripted` backends.
    #[serde(default)]
    pub script_path: Option<PathBuf>,
    pub max_in_flight: usize,
    #[serde(rename = "backoff_base_s", with = "secs")]
    pub backoff_base: Duration,
}

impl BackendConfig {
    fn base(kind: BackendKind) -> Self {
        Self {
            kind,
            base_url: None,
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            request_timeout: Duration::from_secs(120),
            max_retries: 3,
            cache_dir: None,
            script_path: None,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            backoff_base: Duration::from_millis(500),
        }
    }

    pub fn http(base_url: impl Into<String>) -> Self {
        Self { base_url: Some(base_url.into()), ..Self::base(BackendKind::Http) }
    }

    pub fn replay(cache_dir: impl Into<PathBuf>) -> Self {
        Self { cache_dir: Some(cache_dir.into()), ..Self::base(BackendKind::Replay) }
    }

    pub fn scripted(path: impl Into<PathBuf>) -> Self {
        Self { script_path: Some(path.into()), ..Self::base(BackendKind::Scripted) }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self.kind {
            BackendKind::Http if self.base_url.is_none() => Err(ModelError::Config("http backend needs base_url".into())),
            BackendKind::Replay if self.cache_dir.is_none() => Err(ModelError::Config("replay backend needs cache_dir".into())),
            BackendKind::Scripted if self.script_path.is_none() => {
                Err(ModelError::Config("scripted backend needs a script file".into()))
            }
            _ if self.max_in_flight == 0 => Err(ModelError::Config("max_in_flight must be at least 1".into())),
            _ => Ok(()),
        }
    }
}

impl FromStr for BackendConfig {
    type Err = ModelError;

    /// `http:<url>`, `replay:<cache dir>` or `scripted:<file>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (scheme, rest) = s
            .split_once(':')
            .ok_or_else(|| ModelError::Config(format!("backend {s:?} needs a scheme prefix (http:, replay:, scripted:)")))?;
        if rest.is_empty() {
            return Err(ModelError::Config(format!("backend {s:?} is missing its target")));
        }
        match scheme {
            "http" => Ok(Self::http(rest)),
            "replay" => Ok(Self::replay(rest)),
            "scripted" => Ok(Self::scripted(rest)),
            other => Err(ModelError::Config(format!("unknown backend scheme {other:?}"))),
        }
    }
}

impl fmt::Display for BackendConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            BackendKind::Http => write!(f, "http:{}", self.base_url.as_deref().unwrap_or("")),
            BackendKind::Replay => write!(f, "replay:{}", self.cache_dir.as_deref().unwrap_or(Path::new("")).display()),
            BackendKind::Scripted => {
                write!(f, "scripted:{}", self.script_path.as_deref().unwrap_or(Path::new("")).display())
            }
        }
    }
}

/// Anything that answers chat-completion requests.
pub trait ChatModel: Send + Sync {
    fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, ModelError>;
}

/// Fixed digest → text map.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    responses: HashMap<String, String>,
}

impl ScriptedBackend {
    pub fn new(responses: HashMap<String, String>) -> Self {
        Self { responses }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|source| ModelError::CacheIo { path: path.to_path_buf(), source })?;
        let responses = serde_json::from_str(&raw)
            .map_err(|e| ModelError::Config(format!("script {} is not a digest map: {e}", path.display())))?;
        Ok(Self { responses })
    }

    pub fn insert(&mut self, req: &ModelRequest, text: impl Into<String>) {
        self.responses.insert(request_digest(req), text.into());
    }

    pub fn responses(&self) -> &HashMap<String, String> {
        &self.responses
    }
}

impl ChatModel for ScriptedBackend {
    fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, ModelError> {
        req.validate()?;
        let started = Instant::now();
        let digest = request_digest(req);
        let text = self.responses.get(&digest).ok_or(ModelError::ScriptMiss(digest))?;
        Ok(ModelResponse { text: text.clone(), finish_reason: FinishReason::Stop, latency: started.elapsed(), from_cache: false })
    }
}

/// A configured backend.
#[derive(Debug)]
pub enum Backend {
    Http(HttpBackend),
    Replay(ReplayCache),
    Scripted(ScriptedBackend),
}

impl Backend {
    pub fn from_config(cfg: &BackendConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        Ok(match cfg.kind {
            BackendKind::Http => Backend::Http(HttpBackend::new(cfg.clone())?),
            BackendKind::Replay => Backend::Replay(ReplayCache::new(cfg.cache_dir.clone().expect("validated"))),
            BackendKind::Scripted => Backend::Scripted(ScriptedBackend::from_file(cfg.script_path.as_ref().expect("validated"))?),
        })
    }
}

impl ChatModel for Backend {
    fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, ModelError> {
        match self {
            Backend::Http(b) => b.complete(req),
            Backend::Replay(c) => c.complete(req),
            Backend::Scripted(s) => s.complete(req),
        }
    }
}

/// One-shot convenience: build the backend and send a single request.
pub fn complete(backend: &BackendConfig, req: &ModelRequest) -> Result<ModelResponse, ModelError> {
    Backend::from_config(backend)?.complete(req)
}
