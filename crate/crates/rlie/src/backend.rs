//! Chat-completion backends: the trait, the OpenAI-compatible HTTP client,
//! and the scripted backend used for offline runs and tests.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RlieError};

/// Capability descriptor a backend reports about itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendInfo {
    pub name: String,
    pub max_inflight: usize,
    pub supports_batching: bool,
}

/// One system+user chat exchange returning the assistant text. Implementors
/// configured for determinism (temperature ~ 0, fixed script) must return
/// identical output for identical input.
pub trait ChatBackend: Send + Sync {
    fn info(&self) -> BackendInfo;
    fn complete(&self, system: &str, user: &str) -> Result<String>;
}

/// Remote model configuration. The endpoint is the API base ending in `/v1`;
/// the key comes from the environment, never from config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub timeout_secs: u64,
    pub retry_budget: u32,
    pub max_inflight: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4o-mini".into(),
            temperature: 1e-5,
            max_output_tokens: 1024,
            timeout_secs: 60,
            retry_budget: 3,
            max_inflight: 4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature < 0.0 {
            return Err(RlieError::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_inflight == 0 {
            return Err(RlieError::Config("max_inflight must be >= 1".into()));
        }
        if self.endpoint.trim().is_empty() || self.model.trim().is_empty() {
            return Err(RlieError::Config("endpoint and model must be non-empty".into()));
        }
        Ok(())
    }
}

/// Environment variable holding the API key; `OPENAI_API_KEY` is accepted as
/// a fallback.
pub const API_KEY_ENV: &str = "RLIE_API_KEY";
pub const API_KEY_ENV_FALLBACK: &str = "OPENAI_API_KEY";
/// Optional endpoint override.
pub const ENDPOINT_ENV: &str = "RLIE_ENDPOINT";

pub fn api_key_from_env() -> Result<String> {
    std::env::var(API_KEY_ENV)
        .or_else(|_| std::env::var(API_KEY_ENV_FALLBACK))
        .map_err(|_| {
            RlieError::Config(format!(
                "no API key: set {API_KEY_ENV} (or {API_KEY_ENV_FALLBACK})"
            ))
        })
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: MessageBody,
}

#[derive(Deserialize)]
struct MessageBody {
    content: Option<String>,
}

/// Blocking client for an OpenAI-compatible `/chat/completions` endpoint.
/// Transport failures, 429, and 5xx are retried with exponential backoff up
/// to the retry budget; malformed model output is never retried here (an
/// identical deterministic prompt cannot change a malformed answer).
pub struct OpenAiBackend {
    config: ModelConfig,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl OpenAiBackend {
    pub fn new(mut config: ModelConfig, api_key: String) -> Result<Self> {
        if let Ok(endpoint) = std::env::var(ENDPOINT_ENV) {
            config.endpoint = endpoint;
        }
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| RlieError::Backend(format!("building http client: {e}")))?;
        Ok(Self {
            config,
            api_key,
            client,
        })
    }

    pub fn from_env(config: ModelConfig) -> Result<Self> {
        let key = api_key_from_env()?;
        Self::new(config, key)
    }

    fn attempt(&self, system: &str, user: &str) -> std::result::Result<String, (bool, String)> {
        let url = format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'));
        let body = ChatRequest {
            model: &self.config.model,
            messages: [
                ChatMessage {
                    role: "system",
                    content: system,
                },
                ChatMessage {
                    role: "user",
                    content: user,
                },
            ],
            temperature: self.config.temperature,
            max_tokens: self.config.max_output_tokens,
        };
        let response = self
            .client
            .post(&url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| (true, format!("transport: {e}")))?;

        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err((true, format!("http {status}")));
        }
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            return Err((false, format!("http {status}: {text}")));
        }
        let parsed: ChatResponse = response
            .json()
            .map_err(|e| (false, format!("malformed completion body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or((false, "completion with no choices/content".into()))
    }
}

impl ChatBackend for OpenAiBackend {
    fn info(&self) -> BackendInfo {
        BackendInfo {
            name: format!("openai:{}", self.config.model),
            max_inflight: self.config.max_inflight,
            supports_batching: false,
        }
    }

    fn complete(&self, system: &str, user: &str) -> Result<String> {
        let mut delay = Duration::from_millis(500);
        let mut last = String::new();
        for attempt in 0..=self.config.retry_budget {
            match self.attempt(system, user) {
                Ok(text) => return Ok(text),
                Err((retryable, detail)) => {
                    last = detail;
                    if !retryable || attempt == self.config.retry_budget {
                        break;
                    }
                    std::thread::sleep(delay);
                    delay = delay.saturating_mul(2);
                }
            }
        }
        Err(RlieError::Backend(format!(
            "{} after {} attempt(s): {last}",
            self.info().name,
            self.config.retry_budget + 1
        )))
    }
}

/// Deterministic backend that replays a fixed list of responses (the last
/// one repeats once exhausted), recording every prompt it was sent. Drives
/// offline synthetic runs and the test harness.
pub struct ScriptedChat {
    responses: Vec<String>,
    cursor: AtomicUsize,
    calls: AtomicUsize,
    prompts: Mutex<Vec<(String, String)>>,
}

impl ScriptedChat {
    pub fn new(responses: Vec<String>) -> Self {
        Self {
            responses,
            cursor: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Every (system, user) prompt received, in call order.
    pub fn prompts(&self) -> Vec<(String, String)> {
        self.prompts.lock().unwrap().clone()
    }
}

impl ChatBackend for ScriptedChat {
    fn info(&self) -> BackendInfo {
        BackendInfo {
            name: "scripted".into(),
            max_inflight: 1,
            supports_batching: false,
        }
    }

    fn complete(&self, system: &str, user: &str) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.prompts
            .lock()
            .unwrap()
            .push((system.to_string(), user.to_string()));
        if self.responses.is_empty() {
            return Err(RlieError::Backend("scripted backend has no responses".into()));
        }
        let index = self.cursor.fetch_add(1, Ordering::SeqCst);
        let index = index.min(self.responses.len() - 1);
        Ok(self.responses[index].clone())
    }
}
