//! Chat-completion client used for aggregation, traversal and response
//! generation.
//!
//! The client speaks the common `/chat/completions` JSON shape over a
//! [`Transport`]. Two transports ship with the crate: [`HttpTransport`]
//! for live endpoints and [`MockTransport`], which answers from a fixture
//! table keyed by a digest of the request messages and never touches the
//! network.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const ENV_ENDPOINT: &str = "HAT_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "HAT_LLM_API_KEY";
pub const ENV_MODEL: &str = "HAT_LLM_MODEL";

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("remote unavailable after {attempts} attempt(s): {last}")]
    Unavailable { attempts: u32, last: String },
    #[error("endpoint rejected request with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("request has no messages".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(LlmError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
    #[serde(default)]
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatReply {
    pub content: String,
    pub usage: Usage,
    /// Transport attempts spent on this reply, including the successful one.
    pub attempts: u32,
}

/// Hex SHA-256 over the ordered `(role, content)` pairs of a conversation.
/// Model and sampling parameters are not part of the key.
pub fn request_digest(messages: &[ChatMessage]) -> String {
    let mut hasher = Sha256::new();
    for message in messages {
        let role = match message.role {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        hasher.update(role.as_bytes());
        hasher.update([0x1f]);
        hasher.update(message.content.as_bytes());
        hasher.update([0x1e]);
    }
    let digest: [u8; 32] = hasher.finalize().into();
    hex::encode(digest)
}

// === Transport ===

#[derive(Debug, Clone)]
pub struct HttpRequest {
    pub url: String,
    pub api_key: Option<String>,
    pub body: String,
    pub timeout: Duration,
}

#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, Error)]
#[error("transport failure: {0}")]
pub struct TransportError(pub String);

/// Moves one serialized request to an endpoint and returns the raw response.
pub trait Transport: Send + Sync {
    fn post(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

/// Blocking HTTP transport.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new() -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build();
        Self { agent: ureq::Agent::new_with_config(config) }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl Transport for HttpTransport {
    fn post(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let mut builder = self
            .agent
            .post(&request.url)
            .config()
            .timeout_global(Some(request.timeout))
            .build()
            .header("Content-Type", "application/json");
        if let Some(key) = &request.api_key {
            builder = builder.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = builder
            .send(request.body.as_str())
            .map_err(|e| TransportError(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

/// Offline transport answering from a digest-keyed fixture table.
///
/// Unknown digests get a deterministic synthetic reply so that every
/// request has a stable answer. Every served digest is appended to the
/// request log.
#[derive(Default)]
pub struct MockTransport {
    fixtures: BTreeMap<String, String>,
    log: Mutex<Vec<String>>,
}

impl MockTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fixtures(fixtures: BTreeMap<String, String>) -> Self {
        Self { fixtures, log: Mutex::new(Vec::new()) }
    }

    /// Loads a JSON object mapping request digests to reply strings.
    pub fn from_fixture_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        let fixtures = serde_json::from_str(&text)
            .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        Ok(Self::with_fixtures(fixtures))
    }

    pub fn insert(&mut self, digest: impl Into<String>, reply: impl Into<String>) {
        self.fixtures.insert(digest.into(), reply.into());
    }

    /// Reply served for `messages`, without recording it.
    pub fn reply_for(&self, messages: &[ChatMessage]) -> String {
        let digest = request_digest(messages);
        self.fixtures
            .get(&digest)
            .cloned()
            .unwrap_or_else(|| synthetic_reply(&digest))
    }

    /// Digests served so far, in order.
    pub fn request_log(&self) -> Vec<String> {
        self.log.lock().expect("mock log poisoned").clone()
    }
}

fn synthetic_reply(digest: &str) -> String {
    format!("mock reply {}", &digest[..16])
}

impl Transport for MockTransport {
    fn post(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let parsed: ChatRequest = match serde_json::from_str(&request.body) {
            Ok(parsed) => parsed,
            Err(e) => {
                return Ok(HttpResponse { status: 400, body: format!("bad request: {e}") });
            }
        };
        let digest = request_digest(&parsed.messages);
        let content = self
            .fixtures
            .get(&digest)
            .cloned()
            .unwrap_or_else(|| synthetic_reply(&digest));
        self.log.lock().expect("mock log poisoned").push(digest);

        let prompt_tokens: usize = parsed
            .messages
            .iter()
            .map(|m| m.content.split_whitespace().count())
            .sum();
        let completion_tokens = content.split_whitespace().count();
        let body = serde_json::json!({
            "object": "chat.completion",
            "model": parsed.model,
            "choices": [{
                "index": 0,
                "message": {"role": "assistant", "content": content},
                "finish_reason": "stop",
            }],
            "usage": {
                "prompt_tokens": prompt_tokens,
                "completion_tokens": completion_tokens,
                "total_tokens": prompt_tokens + completion_tokens,
            },
        });
        Ok(HttpResponse { status: 200, body: body.to_string() })
    }
}

// === Client ===

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_delay: Duration::from_secs(1), factor: 2 }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, where `attempt` starts at 1.
    pub fn delay_after(&self, attempt: u32) -> Duration {
        self.base_delay * self.factor.saturating_pow(attempt.saturating_sub(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            endpoint: DEFAULT_ENDPOINT.to_string(),
            api_key: None,
            model: DEFAULT_MODEL.to_string(),
            timeout: Duration::from_secs(30),
            retry: RetryPolicy::default(),
        }
    }
}

impl ClientConfig {
    /// Overlays the `HAT_LLM_*` environment variables on `self`.
    pub fn with_env(mut self) -> Self {
        if let Ok(endpoint) = std::env::var(ENV_ENDPOINT) {
            self.endpoint = endpoint;
        }
        if let Ok(key) = std::env::var(ENV_API_KEY) {
            if !key.is_empty() {
                self.api_key = Some(key);
            }
        }
        if let Ok(model) = std::env::var(ENV_MODEL) {
            self.model = model;
        }
        self
    }
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Shareable chat-completion client. Cloning is cheap; clones share the
/// transport.
#[derive(Clone)]
pub struct ChatClient {
    config: ClientConfig,
    transport: Arc<dyn Transport>,
    sleeper: Sleeper,
    mock: bool,
}

impl fmt::Debug for ChatClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChatClient")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.config.model)
            .field("mock", &self.mock)
            .finish()
    }
}

impl ChatClient {
    /// Live client over HTTP. Fails without an API key.
    pub fn live(config: ClientConfig) -> Result<Self, LlmError> {
        if config.api_key.as_deref().is_none_or(str::is_empty) {
            return Err(LlmError::Config(format!(
                "no API key configured (set {ENV_API_KEY} or pass one in the config)"
            )));
        }
        Ok(Self::with_transport(config, Arc::new(HttpTransport::new())))
    }

    /// Offline client backed by `transport`.
    pub fn mock(transport: Arc<MockTransport>) -> Self {
        let config = ClientConfig { model: "mock".into(), ..ClientConfig::default() };
        let mut client = Self::with_transport(config, transport);
        client.mock = true;
        client
    }

    pub fn with_transport(config: ClientConfig, transport: Arc<dyn Transport>) -> Self {
        Self {
            config,
            transport,
            sleeper: Arc::new(std::thread::sleep),
            mock: false,
        }
    }

    /// Replaces the backoff sleep, e.g. with a recorder in tests.
    pub fn with_sleeper(mut self, sleeper: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleeper = Arc::new(sleeper);
        self
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    pub fn is_mock(&self) -> bool {
        self.mock
    }

    /// Builds a request for the configured model.
    pub fn request(&self, messages: Vec<ChatMessage>, temperature: f64) -> ChatRequest {
        ChatRequest {
            model: self.config.model.clone(),
            messages,
            temperature,
            max_tokens: None,
        }
    }

    /// Sends `messages` at the given temperature and returns the reply text.
    pub fn chat(&self, messages: Vec<ChatMessage>, temperature: f64) -> Result<String, LlmError> {
        self.complete(&self.request(messages, temperature)).map(|r| r.content)
    }

    /// Issues one completion, retrying transport failures, 429 and 5xx
    /// with exponential backoff.
    pub fn complete(&self, request: &ChatRequest) -> Result<ChatReply, LlmError> {
        request.validate()?;
        let body = serde_json::to_string(request)
            .map_err(|e| LlmError::InvalidRequest(e.to_string()))?;
        let http = HttpRequest {
            url: self.config.endpoint.clone(),
            api_key: self.config.api_key.clone(),
            body,
            timeout: self.config.timeout,
        };

        let policy = self.config.retry;
        let max_attempts = policy.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=max_attempts {
            match self.transport.post(&http) {
                Ok(response) if (200..300).contains(&response.status) => {
                    let (content, usage) = parse_completion(&response.body)?;
                    return Ok(ChatReply { content, usage, attempts: attempt });
                }
                Ok(response) if response.status == 429 || response.status >= 500 => {
                    last = format!("status {}", response.status);
                }
                Ok(response) => {
                    return Err(LlmError::Rejected { status: response.status, body: response.body });
                }
                Err(e) => last = e.to_string(),
            }
            if attempt < max_attempts {
                let delay = policy.delay_after(attempt);
                log::warn!("chat completion attempt {attempt} failed ({last}); retrying in {delay:?}");
                (self.sleeper)(delay);
            }
        }
        Err(LlmError::Unavailable { attempts: max_attempts, last })
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

fn parse_completion(body: &str) -> Result<(String, Usage), LlmError> {
    let wire: WireResponse =
        serde_json::from_str(body).map_err(|e| LlmError::Protocol(e.to_string()))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| LlmError::Protocol("response has no choices".into()))?;
    Ok((choice.message.content.unwrap_or_default(), wire.usage.unwrap_or_default()))
}
