//! Provider-neutral chat-completion interface with tool calling.
//!
//! A [`Provider`] turns a [`CompletionRequest`] into a [`ModelResponse`].
//! [`LlmClient`] wraps a provider with parameter checks, retries on
//! transient failures, token budgeting and trajectory recording.

mod config;
mod http;
mod mock;
mod source;

pub use config::{ProviderConfig, ProviderKind, ProvidersFile};
pub use http::{AnthropicProvider, OpenAiProvider};
pub use mock::{load_transcript, request_key, MatchMode, MockProvider, MockRecord};
pub use source::{ConfiguredProviders, ProviderSource, TranscriptProviders};

use crate::tools::ToolCall;
use crate::trajectory::{EventKind, Trajectory};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::sync::Arc;
use std::time::Duration;

/// Default sampling temperature for patch generation.
pub const GENERATION_TEMPERATURE: f64 = 1.0;
/// Default sampling temperature for selector and tester judgements.
pub const JUDGE_TEMPERATURE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    /// For `tool` messages: the call this message answers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>, tool_calls: Vec<ToolCall>) -> Self {
        Message {
            role: Role::Assistant,
            content: content.into(),
            tool_calls,
            tool_call_id: None,
        }
    }

    pub fn tool(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Message {
            role: Role::Tool,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: Some(call_id.into()),
        }
    }

    fn plain(role: Role, content: impl Into<String>) -> Self {
        Message {
            role,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub messages: Vec<Message>,
}

impl Conversation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, message: Message) {
        self.messages.push(message);
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// Checks role ordering: system messages only at the start, and every
    /// tool message answers a call from the nearest preceding assistant turn.
    pub fn validate(&self) -> Result<(), String> {
        if self.messages.is_empty() {
            return Err("conversation is empty".into());
        }
        let mut pending: Vec<&str> = Vec::new();
        let mut seen_non_system = false;
        for (i, m) in self.messages.iter().enumerate() {
            match m.role {
                Role::System if seen_non_system => {
                    return Err(format!("message {i}: system message after the conversation started"))
                }
                Role::System => {}
                Role::Tool => {
                    let id = m.tool_call_id.as_deref().unwrap_or_default();
                    let Some(pos) = pending.iter().position(|p| *p == id) else {
                        return Err(format!("message {i}: tool result `{id}` has no matching call"));
                    };
                    pending.remove(pos);
                    seen_non_system = true;
                }
                Role::Assistant => {
                    pending = m.tool_calls.iter().map(|c| c.call_id.as_str()).collect();
                    seen_non_system = true;
                }
                Role::User => {
                    pending.clear();
                    seen_non_system = true;
                }
            }
            if m.role != Role::Assistant && !m.tool_calls.is_empty() {
                return Err(format!("message {i}: only assistant messages carry tool calls"));
            }
        }
        Ok(())
    }

    /// Content of the most recent user or tool message.
    pub fn last_input(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| matches!(m.role, Role::User | Role::Tool))
            .map(|m| m.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub provider: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ModelParams {
    pub fn new(provider: impl Into<String>, model: impl Into<String>, temperature: f64) -> Self {
        ModelParams {
            provider: provider.into(),
            model: model.into(),
            temperature,
            max_tokens: 4096,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    ToolCall,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    #[serde(default)]
    pub content: String,
    #[serde(default)]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default)]
    pub usage: Usage,
    pub finish_reason: FinishReason,
}

impl ModelResponse {
    pub fn text(content: impl Into<String>) -> Self {
        ModelResponse {
            content: content.into(),
            tool_calls: Vec::new(),
            usage: Usage::default(),
            finish_reason: FinishReason::Stop,
        }
    }

    pub fn calls(content: impl Into<String>, tool_calls: Vec<ToolCall>) -> Self {
        ModelResponse {
            content: content.into(),
            tool_calls,
            usage: Usage::default(),
            finish_reason: FinishReason::ToolCall,
        }
    }
}

/// A function the model may call, described by a JSON schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub parameters: Value,
}

pub struct CompletionRequest<'a> {
    pub conversation: &'a Conversation,
    pub params: &'a ModelParams,
    pub tools: &'a [ToolSpec],
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProviderError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("provider returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("mock transcript exhausted after {0} responses")]
    ScriptExhausted(usize),
    #[error("no mock response keyed {0}")]
    KeyMiss(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unknown provider `{0}`")]
    UnknownProvider(String),
    #[error("token budget exhausted: {used} of {limit} tokens used")]
    BudgetExceeded { used: u64, limit: u64 },
    #[error("missing credentials: environment variable `{0}` is not set")]
    MissingCredentials(String),
}

impl ProviderError {
    /// Transport failures and 5xx responses are worth retrying.
    pub fn is_transient(&self) -> bool {
        match self {
            ProviderError::Transport(_) => true,
            ProviderError::Status { status, .. } => *status >= 500,
            _ => false,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ProviderError::Transport(_) => "transport",
            ProviderError::Status { .. } => "http_status",
            ProviderError::Malformed(_) => "malformed_response",
            ProviderError::ScriptExhausted(_) => "script_exhausted",
            ProviderError::KeyMiss(_) => "key_miss",
            ProviderError::InvalidRequest(_) => "invalid_request",
            ProviderError::UnknownProvider(_) => "unknown_provider",
            ProviderError::BudgetExceeded { .. } => "budget_exceeded",
            ProviderError::MissingCredentials(_) => "missing_credentials",
        }
    }
}

/// A model backend. Implementations must be safe to call concurrently.
pub trait Provider: Send + Sync {
    fn name(&self) -> &str;

    /// Inclusive range of accepted sampling temperatures.
    fn temperature_range(&self) -> (f64, f64) {
        (0.0, 2.0)
    }

    fn send(&self, request: &CompletionRequest<'_>) -> Result<ModelResponse, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_millis(500),
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn immediate(attempts: u32) -> Self {
        RetryPolicy {
            attempts,
            initial_backoff: Duration::ZERO,
            multiplier: 1.0,
        }
    }
}

/// Running token count for one agent run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TokenBudget {
    pub limit: Option<u64>,
    pub used: u64,
}

impl TokenBudget {
    pub fn new(limit: Option<u64>) -> Self {
        TokenBudget { limit, used: 0 }
    }

    pub fn unlimited() -> Self {
        Self::default()
    }

    pub fn exhausted(&self) -> bool {
        self.limit.is_some_and(|l| self.used >= l)
    }
}

/// A provider bound to model parameters.
#[derive(Clone)]
pub struct LlmClient {
    provider: Arc<dyn Provider>,
    pub params: ModelParams,
    pub retry: RetryPolicy,
}

impl LlmClient {
    pub fn new(provider: Arc<dyn Provider>, params: ModelParams) -> Self {
        LlmClient {
            provider,
            params,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn provider(&self) -> &Arc<dyn Provider> {
        &self.provider
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    /// Sends the conversation and records the exchange.
    ///
    /// The request event carries only the messages added since the previous
    /// request in the same trajectory, plus the running message count, so the
    /// full conversation can be rebuilt by concatenation.
    pub fn complete(
        &self,
        conversation: &Conversation,
        tools: &[ToolSpec],
        trajectory: &mut Trajectory,
        budget: &mut TokenBudget,
    ) -> Result<ModelResponse, ProviderError> {
        if let Some(limit) = budget.limit {
            if budget.used >= limit {
                return Err(ProviderError::BudgetExceeded {
                    used: budget.used,
                    limit,
                });
            }
        }
        let (lo, hi) = self.provider.temperature_range();
        if !(lo..=hi).contains(&self.params.temperature) {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature {} outside [{lo}, {hi}]",
                self.params.temperature
            )));
        }
        conversation.validate().map_err(ProviderError::InvalidRequest)?;

        let already = trajectory.messages_recorded();
        let fresh = conversation.messages.get(already..).unwrap_or_default();
        trajectory.record(
            EventKind::LlmRequest,
            json!({
                "provider": self.provider.name(),
                "model": self.params.model,
                "temperature": self.params.temperature,
                "max_tokens": self.params.max_tokens,
                "seed": self.params.seed,
                "message_count": conversation.len(),
                "new_messages": fresh,
                "tools": tools.iter().map(|t| t.name.as_str()).collect::<Vec<_>>(),
            }),
        );
        trajectory.set_messages_recorded(conversation.len());

        let request = CompletionRequest {
            conversation,
            params: &self.params,
            tools,
        };
        let mut delay = self.retry.initial_backoff;
        let attempts = self.retry.attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.provider.send(&request) {
                Ok(response) => {
                    budget.used += response.usage.total();
                    trajectory.record(
                        EventKind::LlmResponse,
                        json!({ "attempts": attempt, "response": response, "usage": response.usage }),
                    );
                    return Ok(response);
                }
                Err(e) => {
                    trajectory.record(
                        EventKind::Error,
                        json!({ "source": "llm", "code": e.code(), "message": e.to_string(), "attempt": attempt }),
                    );
                    if !e.is_transient() || attempt >= attempts {
                        // close the request so the trajectory stays paired
                        trajectory.record(
                            EventKind::LlmResponse,
                            json!({ "attempts": attempt, "error": e.code() }),
                        );
                        return Err(e);
                    }
                    std::thread::sleep(delay);
                    delay = delay.mul_f64(self.retry.multiplier);
                }
            }
        }
    }
}

/// Provider for run `k` under round-robin assignment.
pub fn round_robin<T>(providers: &[T], k: usize) -> Result<&T, ProviderError> {
    if providers.is_empty() {
        return Err(ProviderError::UnknownProvider("<empty provider list>".into()));
    }
    Ok(&providers[k % providers.len()])
}
