use std::io;
use std::time::Instant;

use serde_json::{json, Value as Json};

use super::{ChatMessage, ChatProvider, CompletionRequest, GatewayError, ModelResponse, ProviderConfig, Role, Usage};

const BODY_EXCERPT: usize = 500;

/// OpenAI-compatible `/chat/completions` client.
pub struct HttpProvider {
    config: ProviderConfig,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(config: ProviderConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.request_timeout).build();
        HttpProvider { config, agent }
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }
}

fn excerpt(s: &str) -> String {
    if s.len() <= BODY_EXCERPT {
        return s.to_string();
    }
    let mut end = BODY_EXCERPT;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}...", &s[..end])
}

fn wire_message(m: &ChatMessage, native: bool) -> Json {
    match (m.role, native) {
        (Role::System, _) => json!({"role": "system", "content": m.content}),
        (Role::User, _) => json!({"role": "user", "content": m.content}),
        (Role::Assistant, true) => match &m.tool_call {
            Some(call) => json!({
                "role": "assistant",
                "content": if m.content.is_empty() { Json::Null } else { Json::String(m.content.clone()) },
                "tool_calls": [{
                    "id": call.id.clone().unwrap_or_else(|| "call_0".into()),
                    "type": "function",
                    "function": {
                        "name": call.tool,
                        "arguments": Json::Object(call.arguments.clone().into_iter().collect()).to_string(),
                    }
                }]
            }),
            None => json!({"role": "assistant", "content": m.content}),
        },
        (Role::Assistant, false) => json!({"role": "assistant", "content": m.content}),
        (Role::Tool, true) => json!({
            "role": "tool",
            "tool_call_id": m.tool_call.as_ref().and_then(|c| c.id.clone()).unwrap_or_else(|| "call_0".into()),
            "content": m.tool_result.clone().unwrap_or_default(),
        }),
        // Providers without tool roles see results as user turns.
        (Role::Tool, false) => {
            let name = m.tool_call.as_ref().map(|c| c.tool.as_str()).unwrap_or("tool");
            json!({
                "role": "user",
                "content": format!("Result of `{name}`:\n{}", m.tool_result.as_deref().unwrap_or_default()),
            })
        }
    }
}

/// Request body; prompted tool docs are appended to the first system message
/// (or sent as one) without touching the caller's messages.
pub(crate) fn request_body(request: &CompletionRequest) -> Json {
    let native = request.native();
    let mut messages: Vec<Json> = request.messages.iter().map(|m| wire_message(m, native)).collect();
    if let Some(prompt) = request.tool_prompt.as_deref().filter(|p| !p.is_empty()) {
        match messages.iter_mut().find(|m| m["role"] == "system") {
            Some(sys) => {
                let merged = format!("{}\n\n{prompt}", sys["content"].as_str().unwrap_or_default());
                sys["content"] = Json::String(merged);
            }
            None => messages.insert(0, json!({"role": "system", "content": prompt})),
        }
    }
    let mut body = json!({"model": request.model, "messages": messages, "stream": false});
    if native && !request.tools.is_empty() {
        body["tools"] = Json::Array(request.tools.iter().map(|t| t.to_openai()).collect());
    }
    body
}

pub(crate) fn parse_response(body: &Json) -> Result<ModelResponse, GatewayError> {
    let message = body
        .pointer("/choices/0/message")
        .ok_or_else(|| GatewayError::Provider {
            message: format!("response has no choices[0].message: {}", excerpt(&body.to_string())),
        })?;
    let text = message.get("content").and_then(Json::as_str).unwrap_or_default().to_string();
    let native_calls = message
        .get("tool_calls")
        .and_then(Json::as_array)
        .cloned()
        .unwrap_or_default();
    let usage = body.get("usage").and_then(|u| {
        Some(Usage {
            prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
            completion_tokens: u.get("completion_tokens")?.as_u64()?,
        })
    });
    Ok(ModelResponse {
        text,
        native_calls,
        usage,
        latency: 0.0,
    })
}

fn is_timeout(err: &ureq::Transport) -> bool {
    let mut source: Option<&(dyn std::error::Error + 'static)> = std::error::Error::source(err);
    while let Some(e) = source {
        if let Some(io) = e.downcast_ref::<io::Error>() {
            if matches!(io.kind(), io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock) {
                return true;
            }
        }
        source = e.source();
    }
    false
}

impl ChatProvider for HttpProvider {
    fn id(&self) -> &str {
        &self.config.id
    }

    fn supports_native_tools(&self) -> bool {
        self.config.supports_native_tools
    }

    fn send(&self, request: &CompletionRequest) -> Result<ModelResponse, GatewayError> {
        let body = request_body(request);
        tracing::debug!(provider = %self.config.id, body = %body, "chat request");
        let mut req = self.agent.post(&self.endpoint()).set("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let started = Instant::now();
        let resp = match req.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                let text = r.into_string().unwrap_or_default();
                let message = format!("HTTP {code}: {}", excerpt(&text));
                return Err(if code == 401 || code == 403 {
                    GatewayError::Auth { message }
                } else {
                    GatewayError::Provider { message }
                });
            }
            Err(ureq::Error::Transport(t)) if is_timeout(&t) => {
                return Err(GatewayError::Timeout {
                    seconds: self.config.request_timeout.as_secs(),
                })
            }
            Err(ureq::Error::Transport(t)) => {
                return Err(GatewayError::Provider {
                    message: format!("{} unreachable: {t}", self.config.base_url),
                })
            }
        };
        let text = resp.into_string().map_err(|e| GatewayError::Provider {
            message: format!("reading response body: {e}"),
        })?;
        tracing::debug!(provider = %self.config.id, body = %text, "chat response");
        let json: Json = serde_json::from_str(&text).map_err(|e| GatewayError::Provider {
            message: format!("undecodable response ({e}): {}", excerpt(&text)),
        })?;
        let mut out = parse_response(&json)?;
        out.latency = started.elapsed().as_secs_f64();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cat_model::builtin_jinx;
    use crate::tool_schema::{derive_schema, ToolCall};
    use std::collections::BTreeMap;

    #[test]
    fn prompted_body_merges_tool_docs_into_system() {
        let req = CompletionRequest {
            model: "m".into(),
            messages: vec![ChatMessage::system("be brief"), ChatMessage::user("hi")],
            tools: vec![],
            tool_prompt: Some("# Tools\n## tool: sh".into()),
        };
        let body = request_body(&req);
        let sys = body["messages"][0]["content"].as_str().unwrap();
        assert!(sys.starts_with("be brief") && sys.contains("## tool: sh"));
        assert!(body.get("tools").is_none());
    }

    #[test]
    fn native_body_carries_tools_and_tool_role() {
        let mut call = ToolCall::new("sh", BTreeMap::from([("cmd".into(), json!("ls"))]));
        call.id = Some("c9".into());
        let req = CompletionRequest {
            model: "m".into(),
            messages: vec![
                ChatMessage::user("hi"),
                ChatMessage::assistant_call("", call.clone()),
                ChatMessage::tool(call, "a.txt"),
            ],
            tools: vec![derive_schema(&builtin_jinx("sh").unwrap())],
            tool_prompt: None,
        };
        let body = request_body(&req);
        assert_eq!(body["tools"][0]["function"]["name"], "sh");
        assert_eq!(body["messages"][1]["tool_calls"][0]["id"], "c9");
        assert_eq!(body["messages"][2]["role"], "tool");
        assert_eq!(body["messages"][2]["tool_call_id"], "c9");
    }

    #[test]
    fn parses_openai_response() {
        let body = json!({
            "choices": [{"message": {"role": "assistant", "content": null,
                "tool_calls": [{"id": "a", "type": "function", "function": {"name": "sh", "arguments": "{}"}}]}}],
            "usage": {"prompt_tokens": 10, "completion_tokens": 2}
        });
        let r = parse_response(&body).unwrap();
        assert_eq!(r.text, "");
        assert_eq!(r.native_calls.len(), 1);
        assert_eq!(r.usage.unwrap().prompt_tokens, 10);
        assert!(parse_response(&json!({"error": "x"})).is_err());
    }
}
