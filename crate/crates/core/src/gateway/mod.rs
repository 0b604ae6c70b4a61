//! Vendor-agnostic client for OpenAI-compatible chat-completion and embedding
//! endpoints.
//!
//! The [`Gateway`] owns retry policy, credential lookup, usage capture and the
//! reflector privacy guard. Bytes move through a [`Transport`]: [`HttpTransport`]
//! for real servers, [`MockTransport`] for scripted offline runs.

mod http;
mod mock;
mod wire;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use crate::accounting::{Role, UsageLedger};
use crate::model::KnowledgeSnippet;

pub use http::HttpTransport;
pub use mock::{
    EmbeddingFallback, EmbeddingRule, EmbeddingScript, MockReply, MockScript, MockTransport,
    RecordedRequest, ScriptRule,
};
pub use wire::{
    ChatChoice, ChatCompletionBody, ChatCompletionResponse, EmbeddingBody, EmbeddingDatum,
    EmbeddingResponse, WireMessage, WireUsage,
};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("{role} request {request_id} failed after {attempts} attempts: {message}")]
    Transport {
        role: Role,
        request_id: String,
        attempts: u32,
        message: String,
    },
    #[error("configuration error for {role}: {message}")]
    Config { role: Role, message: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("privacy guard: reflector request {request_id} contains knowledge snippet {snippet_id}")]
    Privacy {
        request_id: String,
        snippet_id: String,
    },
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("network: {0}")]
    Network(String),
    #[error("malformed response: {0}")]
    Malformed(String),
}

/// Which chat model a request targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    Reflector,
    Generator,
}

impl ChatRole {
    pub fn ledger_role(self) -> Role {
        match self {
            ChatRole::Reflector => Role::Reflector,
            ChatRole::Generator => Role::Generator,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    System,
    User,
    Assistant,
}

impl Speaker {
    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::System => "system",
            Speaker::User => "user",
            Speaker::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub role_tag: ChatRole,
    pub messages: Vec<(Speaker, String)>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub request_id: String,
}

impl ChatRequest {
    pub fn user(
        role_tag: ChatRole,
        request_id: impl Into<String>,
        prompt: impl Into<String>,
        temperature: f64,
        max_tokens: u32,
    ) -> Self {
        Self {
            role_tag,
            messages: vec![(Speaker::User, prompt.into())],
            temperature,
            max_tokens,
            request_id: request_id.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub usage: TokenUsage,
    pub finish_reason: FinishReason,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// One model endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    /// Environment variable holding the bearer token. Keys never live in config files.
    pub api_key_env: Option<String>,
    /// Fail before sending when the key variable is unset.
    pub require_api_key: bool,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    /// Expected embedding dimension, checked when set.
    pub dimension: Option<usize>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000".into(),
            model_name: "default".into(),
            api_key_env: None,
            require_api_key: false,
            max_tokens: 2048,
            timeout_secs: 120,
            dimension: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoints {
    pub reflector: EndpointConfig,
    pub generator: EndpointConfig,
    pub embedder: EndpointConfig,
}

impl Default for Endpoints {
    fn default() -> Self {
        Self {
            reflector: EndpointConfig {
                base_url: "https://api.openai.com".into(),
                model_name: "gpt-3.5-turbo".into(),
                require_api_key: true,
                ..EndpointConfig::default()
            },
            generator: EndpointConfig {
                model_name: "HuggingFaceH4/zephyr-7b-beta".into(),
                ..EndpointConfig::default()
            },
            embedder: EndpointConfig {
                base_url: "http://localhost:8001".into(),
                model_name: "sentence-transformers/all-mpnet-base-v2".into(),
                dimension: Some(768),
                ..EndpointConfig::default()
            },
        }
    }
}

impl Endpoints {
    pub fn get(&self, role: Role) -> &EndpointConfig {
        match role {
            Role::Reflector => &self.reflector,
            Role::Generator => &self.generator,
            Role::Embedder => &self.embedder,
        }
    }
}

pub fn default_key_env(role: Role) -> &'static str {
    match role {
        Role::Reflector => "PSI_REFLECTOR_API_KEY",
        Role::Generator => "PSI_GENERATOR_API_KEY",
        Role::Embedder => "PSI_EMBEDDER_API_KEY",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay_ms: 1000,
            max_delay_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

/// What a transport receives for a chat call.
pub struct ChatCall<'a> {
    pub role: ChatRole,
    pub endpoint: &'a EndpointConfig,
    pub request_id: &'a str,
    pub api_key: Option<&'a str>,
    pub body: &'a ChatCompletionBody,
}

pub struct EmbedCall<'a> {
    pub endpoint: &'a EndpointConfig,
    pub request_id: &'a str,
    pub api_key: Option<&'a str>,
    pub body: &'a EmbeddingBody,
}

pub trait Transport: Send + Sync {
    fn chat(&self, call: &ChatCall<'_>) -> Result<ChatCompletionResponse, TransportError>;
    fn embed(&self, call: &EmbedCall<'_>) -> Result<EmbeddingResponse, TransportError>;
}

pub struct Gateway {
    transport: Arc<dyn Transport>,
    endpoints: Endpoints,
    retry: RetryPolicy,
    parallelism: usize,
    ledger: Arc<UsageLedger>,
    private: RwLock<Vec<KnowledgeSnippet>>,
}

impl Gateway {
    pub fn new(
        transport: Arc<dyn Transport>,
        endpoints: Endpoints,
        retry: RetryPolicy,
        parallelism: usize,
    ) -> Self {
        Self {
            transport,
            endpoints,
            retry,
            parallelism: parallelism.max(1),
            ledger: Arc::new(UsageLedger::new()),
            private: RwLock::new(Vec::new()),
        }
    }

    pub fn with_ledger(mut self, ledger: Arc<UsageLedger>) -> Self {
        self.ledger = ledger;
        self
    }

    pub fn ledger(&self) -> &Arc<UsageLedger> {
        &self.ledger
    }

    pub fn endpoints(&self) -> &Endpoints {
        &self.endpoints
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism
    }

    /// Marks snippets as private: no reflector request may contain their bodies.
    pub fn register_private(&self, snippets: &[KnowledgeSnippet]) {
        let mut guard = self.private.write().expect("privacy lock");
        for s in snippets {
            if !s.body.trim().is_empty() && !guard.iter().any(|g| g.body == s.body) {
                guard.push(s.clone());
            }
        }
    }

    fn check_privacy(&self, request: &ChatRequest) -> Result<(), GatewayError> {
        if request.role_tag != ChatRole::Reflector {
            return Ok(());
        }
        let guard = self.private.read().expect("privacy lock");
        for snippet in guard.iter() {
            let body = snippet.body.trim();
            if request.messages.iter().any(|(_, text)| text.contains(body)) {
                return Err(GatewayError::Privacy {
                    request_id: request.request_id.clone(),
                    snippet_id: snippet.id.clone(),
                });
            }
        }
        Ok(())
    }

    fn api_key(&self, role: Role) -> Result<Option<String>, GatewayError> {
        let endpoint = self.endpoints.get(role);
        let var = endpoint
            .api_key_env
            .clone()
            .unwrap_or_else(|| default_key_env(role).to_string());
        match std::env::var(&var) {
            Ok(key) if !key.is_empty() => Ok(Some(key)),
            _ if endpoint.require_api_key => Err(GatewayError::Config {
                role,
                message: format!("environment variable {var} is not set"),
            }),
            _ => Ok(None),
        }
    }

    /// Runs `call` with the retry policy. Client errors other than 429 are not retried.
    fn with_retries<T>(
        &self,
        role: Role,
        request_id: &str,
        mut call: impl FnMut() -> Result<T, TransportError>,
    ) -> Result<(T, u32), GatewayError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            match call() {
                Ok(value) => {
                    debug!(%role, request_id, attempts, "exchange complete");
                    return Ok((value, attempts));
                }
                Err(TransportError::Http { status, body })
                    if (400..500).contains(&status) && status != 429 =>
                {
                    return Err(GatewayError::Config {
                        role,
                        message: format!("HTTP {status}: {body}"),
                    });
                }
                Err(err) => {
                    if attempts > self.retry.max_retries {
                        return Err(GatewayError::Transport {
                            role,
                            request_id: request_id.to_string(),
                            attempts,
                            message: err.to_string(),
                        });
                    }
                    let delay = self.retry.delay(attempts);
                    warn!(%role, request_id, attempts, ?delay, error = %err, "retrying");
                    std::thread::sleep(delay);
                }
            }
        }
    }

    pub fn chat_complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        if request.messages.is_empty() {
            return Err(GatewayError::Precondition("chat request without messages".into()));
        }
        if request.temperature.is_nan() || request.temperature < 0.0 || request.max_tokens == 0 {
            return Err(GatewayError::Precondition(format!(
                "invalid sampling parameters on {}",
                request.request_id
            )));
        }
        self.check_privacy(request)?;
        let role = request.role_tag.ledger_role();
        let endpoint = self.endpoints.get(role);
        let key = self.api_key(role)?;
        let body = ChatCompletionBody {
            model: endpoint.model_name.clone(),
            messages: request
                .messages
                .iter()
                .map(|(speaker, text)| WireMessage {
                    role: speaker.as_str().to_string(),
                    content: text.clone(),
                })
                .collect(),
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let call = ChatCall {
            role: request.role_tag,
            endpoint,
            request_id: &request.request_id,
            api_key: key.as_deref(),
            body: &body,
        };
        let (reply, attempts) =
            self.with_retries(role, &request.request_id, || self.transport.chat(&call))?;
        let choice = reply.choices.into_iter().next().ok_or_else(|| {
            GatewayError::Integrity(format!("{}: response has no choices", request.request_id))
        })?;
        let usage = reply.usage.unwrap_or_default();
        let usage = TokenUsage {
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
        };
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("length") => FinishReason::Length,
            Some("error") => FinishReason::Error,
            _ => FinishReason::Stop,
        };
        self.ledger.record(
            role,
            &request.request_id,
            usage.prompt_tokens,
            usage.completion_tokens,
            attempts,
        );
        Ok(ChatResponse {
            text: choice.message.content.unwrap_or_default(),
            usage,
            finish_reason,
            attempts,
        })
    }

    /// Issues requests concurrently (at most `parallelism` in flight) and
    /// returns results in input order.
    pub fn chat_many(&self, requests: &[ChatRequest]) -> Vec<Result<ChatResponse, GatewayError>> {
        let next = AtomicUsize::new(0);
        let mut slots: Vec<Option<Result<ChatResponse, GatewayError>>> =
            (0..requests.len()).map(|_| None).collect();
        let workers = self.parallelism.min(requests.len());
        if workers <= 1 {
            return requests.iter().map(|r| self.chat_complete(r)).collect();
        }
        let results = std::sync::Mutex::new(&mut slots);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= requests.len() {
                        break;
                    }
                    let outcome = self.chat_complete(&requests[i]);
                    results.lock().expect("results lock")[i] = Some(outcome);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.expect("every request slot is filled"))
            .collect()
    }

    pub fn embed(
        &self,
        texts: &[String],
        request_id: &str,
    ) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::Precondition("embed called with no texts".into()));
        }
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(GatewayError::Precondition(format!("text {i} is empty")));
        }
        let role = Role::Embedder;
        let endpoint = &self.endpoints.embedder;
        let key = self.api_key(role)?;
        let body = EmbeddingBody {
            model: endpoint.model_name.clone(),
            input: texts.to_vec(),
        };
        let call = EmbedCall {
            endpoint,
            request_id,
            api_key: key.as_deref(),
            body: &body,
        };
        let (reply, attempts) = self.with_retries(role, request_id, || self.transport.embed(&call))?;
        let mut data = reply.data;
        data.sort_by_key(|d| d.index);
        if data.len() != texts.len() || data.iter().enumerate().any(|(i, d)| d.index != i) {
            return Err(GatewayError::Integrity(format!(
                "{request_id}: expected {} embeddings, got {}",
                texts.len(),
                data.len()
            )));
        }
        let dim = endpoint.dimension.unwrap_or(data[0].embedding.len());
        for d in &data {
            if d.embedding.len() != dim {
                return Err(GatewayError::Integrity(format!(
                    "{request_id}: embedding {} has dimension {}, expected {dim}",
                    d.index,
                    d.embedding.len()
                )));
            }
            if d.embedding.iter().any(|v| !v.is_finite()) {
                return Err(GatewayError::Integrity(format!(
                    "{request_id}: embedding {} has non-finite entries",
                    d.index
                )));
            }
        }
        let usage = reply.usage.unwrap_or_default();
        self.ledger
            .record(role, request_id, usage.prompt_tokens, 0, attempts);
        Ok(data
            .into_iter()
            .map(|d| EmbeddingVector {
                values: d.embedding,
            })
            .collect())
    }
}
