//! Chat-completion client.
//!
//! One wire shape (OpenAI-compatible chat completions) covers hosted
//! providers and local runtimes alike. Providers without native function
//! calling get the catalog rendered into the system prompt instead.
//! There are no transport-level retries; retrying is the harness's business.

mod http;
mod registry;
mod scripted;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::tool_schema::{prompted_tool_instructions, ToolCall, ToolSchema};

pub use http::HttpProvider;
pub use registry::{ProviderEntry, ProviderRegistry, PROVIDERS_ENV};
pub use scripted::ScriptedProvider;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    /// On assistant messages: the call the model made. On tool messages: the call answered.
    pub tool_call: Option<ToolCall>,
    pub tool_result: Option<String>,
}

impl ChatMessage {
    fn plain(role: Role, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
            tool_call: None,
            tool_result: None,
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::plain(Role::Assistant, content)
    }

    pub fn assistant_call(content: impl Into<String>, call: ToolCall) -> Self {
        ChatMessage {
            tool_call: Some(call),
            ..Self::plain(Role::Assistant, content)
        }
    }

    pub fn tool(call: ToolCall, result: impl Into<String>) -> Self {
        let result = result.into();
        ChatMessage {
            role: Role::Tool,
            content: result.clone(),
            tool_call: Some(call),
            tool_result: Some(result),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.role != Role::Tool || self.tool_result.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelResponse {
    pub text: String,
    /// Raw provider tool-call payloads, passed through untouched.
    pub native_calls: Vec<Json>,
    pub usage: Option<Usage>,
    /// Seconds.
    pub latency: f64,
}

impl ModelResponse {
    pub fn text(text: impl Into<String>) -> Self {
        ModelResponse {
            text: text.into(),
            native_calls: Vec::new(),
            usage: None,
            latency: 0.0,
        }
    }

    pub fn native(payload: Json) -> Self {
        ModelResponse {
            native_calls: vec![payload],
            ..ModelResponse::text("")
        }
    }

    /// A prompted-mode reply containing one fenced call block.
    pub fn call(call: &ToolCall) -> Self {
        ModelResponse::text(crate::tool_schema::render_call_block(call))
    }

    pub fn is_empty(&self) -> bool {
        self.text.trim().is_empty() && self.native_calls.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProviderConfig {
    pub id: String,
    pub base_url: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub supports_native_tools: bool,
    #[serde(with = "secs")]
    pub request_timeout: Duration,
}

mod secs {
    use serde::Serializer;
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }
}

pub const DEFAULT_REQUEST_TIMEOUT: Duration = Duration::from_secs(300);

impl ProviderConfig {
    pub fn new(id: impl Into<String>, base_url: impl Into<String>) -> Result<Self, GatewayError> {
        let cfg = ProviderConfig {
            id: id.into(),
            base_url: base_url.into(),
            api_key: None,
            supports_native_tools: false,
            request_timeout: DEFAULT_REQUEST_TIMEOUT,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let url = url::Url::parse(&self.base_url).map_err(|e| GatewayError::InvalidConfig {
            message: format!("provider `{}`: base_url `{}`: {e}", self.id, self.base_url),
        })?;
        if !matches!(url.scheme(), "http" | "https") || url.host_str().is_none() {
            return Err(GatewayError::InvalidConfig {
                message: format!("provider `{}`: base_url `{}` is not an http(s) URL", self.id, self.base_url),
            });
        }
        Ok(())
    }
}

/// What actually goes to a provider. `messages` are the caller's, unmodified;
/// prompted tool documentation travels separately in `tool_prompt`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    /// Structured tool schemas, populated only for native-tool providers.
    pub tools: Vec<ToolSchema>,
    pub tool_prompt: Option<String>,
}

impl CompletionRequest {
    pub fn native(&self) -> bool {
        self.tool_prompt.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GatewayError {
    #[error("provider error: {message}")]
    Provider { message: String },
    #[error("provider request timed out after {seconds}s")]
    Timeout { seconds: u64 },
    #[error("authentication failed: {message}")]
    Auth { message: String },
    #[error("scripted provider exhausted after {served} replies")]
    ScriptExhausted { served: usize },
    #[error("cannot complete an empty conversation")]
    EmptyConversation,
    #[error("tool message without a tool result")]
    InvalidMessage,
    #[error("unknown provider `{id}`")]
    UnknownProvider { id: String },
    #[error("invalid provider config: {message}")]
    InvalidConfig { message: String },
}

pub trait ChatProvider: Send + Sync {
    fn id(&self) -> &str;
    fn supports_native_tools(&self) -> bool;
    fn send(&self, request: &CompletionRequest) -> Result<ModelResponse, GatewayError>;
}

/// Send one chat turn. Tools go structurally to native-tool providers and
/// into the system prompt otherwise.
pub fn complete(
    messages: &[ChatMessage],
    tools: &[ToolSchema],
    model: &str,
    provider: &dyn ChatProvider,
) -> Result<ModelResponse, GatewayError> {
    if messages.is_empty() {
        return Err(GatewayError::EmptyConversation);
    }
    if !messages.iter().all(ChatMessage::is_valid) {
        return Err(GatewayError::InvalidMessage);
    }
    let native = provider.supports_native_tools();
    let request = CompletionRequest {
        model: model.to_string(),
        messages: messages.to_vec(),
        tools: if native { tools.to_vec() } else { Vec::new() },
        tool_prompt: (!native).then(|| prompted_tool_instructions(tools)),
    };
    let response = provider.send(&request)?;
    if response.is_empty() {
        return Err(GatewayError::Provider {
            message: format!("provider `{}` returned an empty reply", provider.id()),
        });
    }
    Ok(response)
}
