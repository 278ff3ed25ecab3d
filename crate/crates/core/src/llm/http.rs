use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{CompletionRequest, CompletionResponse, GatewayError, LanguageModel, Usage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (0-based): doubles every time.
    pub fn backoff(&self, attempt: u32) -> Duration {
        self.initial_backoff.saturating_mul(1u32 << attempt.min(16))
    }
}

/// How the assistant prefix reaches the backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefillMode {
    /// Sent as a trailing partial assistant message.
    #[default]
    AssistantMessage,
    /// Appended to the user message, for backends that reject partial turns.
    FoldIntoUser,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub retry: RetryPolicy,
    pub request_timeout: Duration,
    pub requests_per_minute: Option<f64>,
    pub prefill: PrefillMode,
}

impl BackendConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: "CWM_LLM_API_KEY".into(),
            retry: RetryPolicy::default(),
            request_timeout: Duration::from_secs(120),
            requests_per_minute: None,
            prefill: PrefillMode::default(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.base_url.trim().is_empty() {
            return Err(GatewayError::Config(
                "http backend requires a base URL".into(),
            ));
        }
        if self.model.trim().is_empty() {
            return Err(GatewayError::Config(
                "http backend requires a model name".into(),
            ));
        }
        Ok(())
    }

    pub fn endpoint(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

/// Token bucket that lets callers go into debt: each reservation returns how
/// long the caller must wait before sending.
#[derive(Debug, Clone)]
pub struct TokenBucket {
    capacity: f64,
    tokens: f64,
    rate_per_sec: f64,
    last: Instant,
}

impl TokenBucket {
    pub fn new(capacity: f64, rate_per_sec: f64) -> Self {
        Self {
            capacity,
            tokens: capacity,
            rate_per_sec,
            last: Instant::now(),
        }
    }

    pub fn per_minute(requests: f64) -> Self {
        Self::new(1.0, requests / 60.0)
    }

    pub fn reserve_at(&mut self, now: Instant) -> Duration {
        let elapsed = now.saturating_duration_since(self.last).as_secs_f64();
        self.last = now.max(self.last);
        self.tokens = (self.tokens + elapsed * self.rate_per_sec).min(self.capacity);
        self.tokens -= 1.0;
        if self.tokens >= 0.0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(-self.tokens / self.rate_per_sec)
        }
    }
}

/// OpenAI-compatible chat-completions client.
pub struct HttpBackend {
    config: BackendConfig,
    agent: ureq::Agent,
    limiter: Option<Mutex<TokenBucket>>,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.request_timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        let limiter = config
            .requests_per_minute
            .map(|rpm| Mutex::new(TokenBucket::per_minute(rpm)));
        debug!("top_k is not sent to chat-completions backends; it is fixed by the server");
        Ok(Self {
            config,
            agent,
            limiter,
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn body(&self, request: &CompletionRequest) -> Value {
        let p = &request.prompt;
        let mut messages = Vec::new();
        if !p.system.is_empty() {
            messages.push(json!({"role": "system", "content": p.system}));
        }
        match self.config.prefill {
            PrefillMode::AssistantMessage => {
                messages.push(json!({"role": "user", "content": p.user}));
                if !p.assistant_prefix.is_empty() {
                    messages.push(json!({"role": "assistant", "content": p.assistant_prefix}));
                }
            }
            PrefillMode::FoldIntoUser => {
                let user = if p.assistant_prefix.is_empty() {
                    p.user.clone()
                } else {
                    format!("{}\n\n{}", p.user, p.assistant_prefix)
                };
                messages.push(json!({"role": "user", "content": user}));
            }
        }
        json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.params.temperature,
            "top_p": request.params.top_p,
            "max_tokens": request.params.max_new_tokens,
        })
    }

    fn send_once(
        &self,
        body: &Value,
        started: Instant,
    ) -> Result<(String, Option<Usage>), GatewayError> {
        let mut req = self.agent.post(&self.config.endpoint());
        if let Ok(key) = std::env::var(&self.config.api_key_env) {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| GatewayError::Transport {
            message: e.to_string(),
            elapsed: started.elapsed(),
        })?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(GatewayError::Status { status, body: text });
        }
        let value: Value = resp.body_mut().read_json().map_err(|e| match e {
            ureq::Error::Timeout(_) | ureq::Error::Io(_) => GatewayError::Transport {
                message: e.to_string(),
                elapsed: started.elapsed(),
            },
            other => GatewayError::Decode(other.to_string()),
        })?;
        let text = value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| {
                GatewayError::Decode("response has no choices[0].message.content".into())
            })?
            .to_string();
        let usage = value.get("usage").map(|u| Usage {
            prompt_tokens: u.get("prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
            completion_tokens: u
                .get("completion_tokens")
                .and_then(Value::as_u64)
                .unwrap_or(0),
        });
        Ok((text, usage))
    }
}

fn transient(e: &GatewayError) -> bool {
    match e {
        GatewayError::Transport { .. } => true,
        GatewayError::Status { status, .. } => *status == 429 || *status >= 500,
        _ => false,
    }
}

impl LanguageModel for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let body = self.body(request);
        let started = Instant::now();
        let mut attempt = 0;
        loop {
            if let Some(limiter) = &self.limiter {
                let wait = limiter
                    .lock()
                    .expect("limiter lock")
                    .reserve_at(Instant::now());
                if !wait.is_zero() {
                    thread::sleep(wait);
                }
            }
            match self.send_once(&body, started) {
                Ok((text, usage)) => {
                    return Ok(CompletionResponse {
                        text,
                        usage,
                        latency: started.elapsed(),
                    })
                }
                Err(e) if transient(&e) && attempt < self.config.retry.max_retries => {
                    let delay = self.config.retry.backoff(attempt);
                    warn!(
                        "{} call failed ({e}); retrying in {:?}",
                        request.action, delay
                    );
                    thread::sleep(delay);
                    attempt += 1;
                }
                Err(GatewayError::Transport { message, .. }) => {
                    return Err(GatewayError::Transport {
                        message,
                        elapsed: started.elapsed(),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn describe(&self) -> String {
        format!("http:{}#{}", self.config.base_url, self.config.model)
    }
}
