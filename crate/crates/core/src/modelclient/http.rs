use std::fmt;
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde_json::{json, Value};

use super::{request_digest, BackendConfig, ChatModel, FinishReason, ModelError, ModelRequest, ModelResponse, ReplayCache};
use crate::sync::Semaphore;

const BODY_EXCERPT: usize = 300;
const MAX_BACKOFF: Duration = Duration::from_secs(30);

/// Chat-completions client. With a cache directory configured, cached
/// responses are served first and every fresh response is stored.
pub struct HttpBackend {
    cfg: BackendConfig,
    endpoint: String,
    client: reqwest::blocking::Client,
    cache: Option<ReplayCache>,
    in_flight: Semaphore,
}

impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend").field("endpoint", &self.endpoint).field("cache", &self.cache).finish()
    }
}

fn endpoint_for(base: &str) -> String {
    let base = base.trim_end_matches('/');
    if base.ends_with("/chat/completions") {
        base.to_string()
    } else {
        format!("{base}/chat/completions")
    }
}

fn excerpt(body: &str) -> String {
    let mut s: String = body.chars().take(BODY_EXCERPT).collect();
    if body.chars().count() > BODY_EXCERPT {
        s.push('…');
    }
    s
}

enum Attempt {
    Done(String, FinishReason),
    Retry(ModelError),
    Fatal(ModelError),
}

impl HttpBackend {
    pub fn new(cfg: BackendConfig) -> Result<Self, ModelError> {
        let base = cfg.base_url.as_deref().ok_or_else(|| ModelError::Config("http backend needs base_url".into()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.request_timeout)
            .build()
            .map_err(|e| ModelError::Config(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint_for(base),
            cache: cfg.cache_dir.clone().map(ReplayCache::new),
            in_flight: Semaphore::new(cfg.max_in_flight),
            client,
            cfg,
        })
    }

    fn body(req: &ModelRequest) -> Value {
        let mut body = json!({
            "model": req.model_id,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        if let Some(stop) = &req.stop {
            body["stop"] = json!(stop);
        }
        body
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let mut call = self.client.post(&self.endpoint).json(body);
        if let Some(key) = std::env::var(&self.cfg.api_key_env).ok().filter(|k| !k.is_empty()) {
            call = call.bearer_auth(key);
        }
        let resp = match call.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Attempt::Retry(ModelError::Timeout(self.cfg.request_timeout)),
            Err(e) => return Attempt::Retry(ModelError::Transport(e.to_string())),
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) if e.is_timeout() => return Attempt::Retry(ModelError::Timeout(self.cfg.request_timeout)),
            Err(e) => return Attempt::Retry(ModelError::Transport(e.to_string())),
        };
        if !status.is_success() {
            let err = ModelError::HttpStatus { status: status.as_u16(), body: excerpt(&text) };
            return if status.is_server_error() || status.as_u16() == 429 || status.as_u16() == 408 {
                Attempt::Retry(err)
            } else {
                Attempt::Fatal(err)
            };
        }
        match parse_completion(&text) {
            Ok((content, finish)) => Attempt::Done(content, finish),
            Err(e) => Attempt::Fatal(e),
        }
    }
}

/// Pulls `choices[0].message.content` and the finish reason out of a body.
pub(crate) fn parse_completion(body: &str) -> Result<(String, FinishReason), ModelError> {
    let v: Value = serde_json::from_str(body).map_err(|e| ModelError::MalformedResponse(format!("{e}: {}", excerpt(body))))?;
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| ModelError::MalformedResponse(format!("no choices: {}", excerpt(body))))?;
    let content = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ModelError::MalformedResponse(format!("no message content: {}", excerpt(body))))?;
    let finish = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("length") => FinishReason::Length,
        _ => FinishReason::Stop,
    };
    Ok((content.to_string(), finish))
}

impl ChatModel for HttpBackend {
    fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, ModelError> {
        req.validate()?;
        let started = Instant::now();
        let digest = request_digest(req);

        if let Some(cache) = &self.cache {
            if let Some(entry) = cache.get(&digest)? {
                return Ok(ModelResponse {
                    text: entry.response_text,
                    finish_reason: entry.finish_reason,
                    latency: started.elapsed(),
                    from_cache: true,
                });
            }
        }

        let body = Self::body(req);
        let _slot = self.in_flight.acquire();
        let mut last_err = None;
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                let delay = self.cfg.backoff_base.saturating_mul(1 << (attempt - 1).min(16)).min(MAX_BACKOFF);
                debug!("retrying {digest} in {delay:?} (attempt {attempt})");
                thread::sleep(delay);
            }
            match self.attempt(&body) {
                Attempt::Done(text, finish_reason) => {
                    if let Some(cache) = &self.cache {
                        cache.put(req, &text, finish_reason)?;
                    }
                    return Ok(ModelResponse { text, finish_reason, latency: started.elapsed(), from_cache: false });
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) => {
                    warn!("request {digest} failed: {e}");
                    last_err = Some(e);
                }
            }
        }
        Err(last_err.expect("at least one attempt ran"))
    }
}
