//! Chat-completion gateway shared by every agent.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::BufRead;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

pub const DEFAULT_CONTEXT_BUDGET: usize = 8192;
pub const DEFAULT_MAX_TOKENS: u32 = 256;
pub const DISPATCHER_TEMPERATURE: f64 = 0.0;
pub const CALLER_TEMPERATURE: f64 = 0.7;

pub const ENV_LLM_URL: &str = "DISPATCH_SIM_LLM_URL";
pub const ENV_LLM_KEY: &str = "DISPATCH_SIM_LLM_KEY";
pub const ENV_LLM_MODEL: &str = "DISPATCH_SIM_LLM_MODEL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    Caller,
    Dispatcher,
    Auxiliary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub tags: BTreeMap<String, String>,
}

impl ChatRequest {
    pub fn new(system_prompt: impl Into<String>) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            messages: Vec::new(),
            temperature: DISPATCHER_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            tags: BTreeMap::new(),
        }
    }

    pub fn tag(&self, key: &str) -> Option<&str> {
        self.tags.get(key).map(String::as_str)
    }

    pub fn with_tag(mut self, key: &str, value: impl Into<String>) -> Self {
        self.tags.insert(key.to_string(), value.into());
        self
    }

    /// Whitespace-token estimate of the prompt size.
    pub fn prompt_tokens(&self) -> usize {
        count_tokens(&self.system_prompt) + self.messages.iter().map(|m| count_tokens(&m.content)).sum::<usize>()
    }
}

pub fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub prompt: u64,
    pub completion: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub backend_id: String,
    pub latency_ms: u64,
    pub token_counts: TokenCounts,
}

impl ChatResponse {
    pub fn is_refusal(&self) -> bool {
        self.content.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("[{backend}] no fixture utterance for session {session:?}, agent {agent:?}, turn {turn}")]
    FixtureExhausted {
        backend: String,
        session: String,
        agent: String,
        turn: String,
    },
    #[error("[{backend}] transport error after {retries} retries: {message}")]
    Transport {
        backend: String,
        retries: u32,
        message: String,
    },
    #[error("[{backend}] timed out after {retries} retries")]
    Timeout { backend: String, retries: u32 },
    #[error("[{backend}] endpoint returned status {status} after {retries} retries")]
    Status { backend: String, status: u16, retries: u32 },
    #[error("[{backend}] malformed response: {message}")]
    Protocol { backend: String, message: String },
    #[error("prompt of {tokens} tokens exceeds the context budget of {budget}")]
    OversizePrompt { tokens: usize, budget: usize },
    #[error("configuration error: {0}")]
    Config(String),
}

impl GatewayError {
    pub fn retries(&self) -> Option<u32> {
        match self {
            GatewayError::Transport { retries, .. }
            | GatewayError::Timeout { retries, .. }
            | GatewayError::Status { retries, .. } => Some(*retries),
            _ => None,
        }
    }
}

pub trait LlmGateway: Send + Sync {
    fn backend_id(&self) -> String;
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

impl<G: LlmGateway + ?Sized> LlmGateway for std::sync::Arc<G> {
    fn backend_id(&self) -> String {
        (**self).backend_id()
    }
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(request)
    }
}

impl<G: LlmGateway + ?Sized> LlmGateway for Box<G> {
    fn backend_id(&self) -> String {
        (**self).backend_id()
    }
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(request)
    }
}

/// Rejects requests that exceed the context budget before they reach the backend.
pub struct Budgeted<G> {
    inner: G,
    budget: usize,
}

impl<G: LlmGateway> Budgeted<G> {
    pub fn new(inner: G, budget: usize) -> Self {
        Self { inner, budget }
    }
}

impl<G: LlmGateway> LlmGateway for Budgeted<G> {
    fn backend_id(&self) -> String {
        self.inner.backend_id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let tokens = request.prompt_tokens();
        if tokens > self.budget {
            return Err(GatewayError::OversizePrompt {
                tokens,
                budget: self.budget,
            });
        }
        self.inner.complete(request)
    }
}

/// One line of a scripted fixture file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptLine {
    pub session: String,
    pub agent: String,
    pub turn: u64,
    pub content: String,
}

type ScriptKey = (String, String, u64);

/// Exact replay of fixture utterances keyed by (session, agent, turn).
#[derive(Debug, Default, Clone)]
pub struct ScriptedBackend {
    lines: HashMap<ScriptKey, String>,
}

impl ScriptedBackend {
    pub const ID: &'static str = "scripted";

    pub fn new(lines: impl IntoIterator<Item = ScriptLine>) -> Self {
        Self {
            lines: lines
                .into_iter()
                .map(|l| ((l.session, l.agent, l.turn), l.content))
                .collect(),
        }
    }

    pub fn from_jsonl(reader: impl BufRead) -> Result<Self, GatewayError> {
        let mut lines = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| GatewayError::Config(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ScriptLine =
                serde_json::from_str(&line).map_err(|e| GatewayError::Config(format!("script line {}: {e}", i + 1)))?;
            lines.push(parsed);
        }
        Ok(Self::new(lines))
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }
}

impl LlmGateway for ScriptedBackend {
    fn backend_id(&self) -> String {
        Self::ID.to_string()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let session = request.tag("session").unwrap_or_default().to_string();
        let agent = request.tag("agent").unwrap_or_default().to_string();
        let turn_tag = request.tag("turn").unwrap_or_default().to_string();
        let exhausted = || GatewayError::FixtureExhausted {
            backend: Self::ID.to_string(),
            session: session.clone(),
            agent: agent.clone(),
            turn: turn_tag.clone(),
        };
        let turn: u64 = turn_tag.parse().map_err(|_| exhausted())?;
        let content = self
            .lines
            .get(&(session.clone(), agent.clone(), turn))
            .ok_or_else(exhausted)?;
        Ok(ChatResponse {
            content: content.clone(),
            backend_id: Self::ID.to_string(),
            latency_ms: 0,
            token_counts: TokenCounts {
                prompt: request.prompt_tokens() as u64,
                completion: count_tokens(content) as u64,
            },
        })
    }
}

/// Passes requests through and keeps every answer as a scripted fixture line.
pub struct Recorder<G> {
    inner: G,
    lines: Mutex<Vec<ScriptLine>>,
}

impl<G: LlmGateway> Recorder<G> {
    pub fn new(inner: G) -> Self {
        Self {
            inner,
            lines: Mutex::new(Vec::new()),
        }
    }

    pub fn take(&self) -> Vec<ScriptLine> {
        std::mem::take(&mut *self.lines.lock().expect("recorder lock"))
    }
}

impl<G: LlmGateway> LlmGateway for Recorder<G> {
    fn backend_id(&self) -> String {
        self.inner.backend_id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let resp = self.inner.complete(request)?;
        if let Some(turn) = request.tag("turn").and_then(|t| t.parse().ok()) {
            self.lines.lock().expect("recorder lock").push(ScriptLine {
                session: request.tag("session").unwrap_or_default().to_string(),
                agent: request.tag("agent").unwrap_or_default().to_string(),
                turn,
                content: resp.content.clone(),
            });
        }
        Ok(resp)
    }
}

#[derive(Clone)]
pub struct RemoteConfig {
    pub url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub retry_budget: u32,
    pub backoff_base: Duration,
}

impl fmt::Debug for RemoteConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteConfig")
            .field("url", &self.url)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("model", &self.model)
            .field("timeout", &self.timeout)
            .field("retry_budget", &self.retry_budget)
            .field("backoff_base", &self.backoff_base)
            .finish()
    }
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            api_key: None,
            model: "default".into(),
            timeout: Duration::from_secs(30),
            retry_budget: 2,
            backoff_base: Duration::from_millis(250),
        }
    }

    /// Reads `DISPATCH_SIM_LLM_URL`, `DISPATCH_SIM_LLM_KEY` and `DISPATCH_SIM_LLM_MODEL`.
    pub fn from_env() -> Result<Self, GatewayError> {
        let url = std::env::var(ENV_LLM_URL)
            .ok()
            .filter(|u| !u.trim().is_empty())
            .ok_or_else(|| GatewayError::Config(format!("{ENV_LLM_URL} is not set")))?;
        let mut cfg = Self::new(url);
        cfg.api_key = std::env::var(ENV_LLM_KEY).ok().filter(|k| !k.is_empty());
        if let Ok(model) = std::env::var(ENV_LLM_MODEL) {
            if !model.is_empty() {
                cfg.model = model;
            }
        }
        Ok(cfg)
    }
}

/// Chat-completion endpoint over HTTP.
pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
}

enum Attempt {
    Retry(GatewayError),
    Fatal(GatewayError),
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    /// Wire body for a request. Message content is forwarded unchanged.
    pub fn wire_body(&self, request: &ChatRequest) -> serde_json::Value {
        let perspective = request.tag("agent").unwrap_or("dispatcher");
        let own = if perspective == "caller" {
            Role::Caller
        } else {
            Role::Dispatcher
        };
        let mut messages = vec![json!({"role": "system", "content": request.system_prompt})];
        for m in &request.messages {
            let role = match m.role {
                Role::System => "system",
                r if r == own && perspective != "narrator" && !perspective.starts_with("auxiliary") => "assistant",
                _ => "user",
            };
            messages.push(json!({"role": role, "content": m.content}));
        }
        json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
    }

    fn backend_name(&self) -> String {
        format!("remote:{}", self.config.model)
    }

    fn attempt(&self, body: &serde_json::Value, retries: u32) -> Result<String, Attempt> {
        let backend = self.backend_name();
        let mut req = self.agent.post(&self.config.url);
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(Attempt::Retry(GatewayError::Timeout { backend, retries })),
            Err(e) => {
                return Err(Attempt::Retry(GatewayError::Transport {
                    backend,
                    retries,
                    message: e.to_string(),
                }))
            }
        };
        let status = resp.status().as_u16();
        if status != 200 {
            let err = GatewayError::Status {
                backend,
                status,
                retries,
            };
            return Err(if status == 429 || status >= 500 {
                Attempt::Retry(err)
            } else {
                Attempt::Fatal(err)
            });
        }
        let value: serde_json::Value = resp.body_mut().read_json().map_err(|e| {
            Attempt::Fatal(GatewayError::Protocol {
                backend: backend.clone(),
                message: e.to_string(),
            })
        })?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                Attempt::Fatal(GatewayError::Protocol {
                    backend,
                    message: "missing choices[0].message.content".into(),
                })
            })
    }
}

impl LlmGateway for RemoteBackend {
    fn backend_id(&self) -> String {
        self.backend_name()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let body = self.wire_body(request);
        let started = Instant::now();
        let mut retries = 0;
        loop {
            match self.attempt(&body, retries) {
                Ok(content) => {
                    return Ok(ChatResponse {
                        token_counts: TokenCounts {
                            prompt: request.prompt_tokens() as u64,
                            completion: count_tokens(&content) as u64,
                        },
                        content,
                        backend_id: self.backend_name(),
                        latency_ms: started.elapsed().as_millis() as u64,
                    })
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) => {
                    if retries >= self.config.retry_budget {
                        return Err(e);
                    }
                    std::thread::sleep(self.config.backoff_base * 2u32.pow(retries));
                    retries += 1;
                }
            }
        }
    }
}
