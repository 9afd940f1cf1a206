//! Wire conventions for tool calls.
//!
//! Prompted mode: the model replies with one fenced block
//!
//! ````text
//! ```tool_call
//! {"tool": "sh", "arguments": {"cmd": "ls"}}
//! ```
//! ````
//!
//! Only the first block of a turn is honored. Native mode: the provider's
//! structured payload (`{"function": {"name", "arguments"}}` or the flat
//! `{"name", "arguments"}` form) is passed through verbatim.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use super::{ToolCall, ToolSchema};

pub const CALL_FENCE: &str = "```tool_call";
const CLOSE_FENCE: &str = "```";
const TOOL_HEADING: &str = "## tool: ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CallMode {
    Native,
    Prompted,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CallParseError {
    /// A call block was present but could not be parsed.
    #[error("malformed tool call: {reason}")]
    MalformedCall { reason: String },
}

fn malformed(reason: impl Into<String>) -> CallParseError {
    CallParseError::MalformedCall { reason: reason.into() }
}

/// Object whose keys must be unique.
#[derive(Debug, Default)]
struct UniqueMap(BTreeMap<String, Json>);

impl<'de> Deserialize<'de> for UniqueMap {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = UniqueMap;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object of arguments")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<UniqueMap, A::Error> {
                let mut out = BTreeMap::new();
                while let Some(key) = map.next_key::<String>()? {
                    let value: Json = map.next_value()?;
                    if out.insert(key.clone(), value).is_some() {
                        return Err(de::Error::custom(format!("duplicate argument `{key}`")));
                    }
                }
                Ok(UniqueMap(out))
            }
        }
        d.deserialize_map(V)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockPayload {
    tool: String,
    #[serde(default)]
    arguments: UniqueMap,
}

/// Arguments given either as an object or as a JSON-encoded string.
enum RawArguments {
    Object(UniqueMap),
    Encoded(String),
}

impl<'de> Deserialize<'de> for RawArguments {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = RawArguments;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object or a JSON string")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<RawArguments, E> {
                Ok(RawArguments::Encoded(v.to_string()))
            }
            fn visit_map<A: MapAccess<'de>>(self, map: A) -> Result<RawArguments, A::Error> {
                UniqueMap::deserialize(de::value::MapAccessDeserializer::new(map)).map(RawArguments::Object)
            }
            fn visit_unit<E: de::Error>(self) -> Result<RawArguments, E> {
                Ok(RawArguments::Object(UniqueMap::default()))
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Deserialize)]
struct NativeFunction {
    name: String,
    arguments: Option<RawArguments>,
}

#[derive(Deserialize)]
struct NativePayload {
    id: Option<String>,
    function: Option<NativeFunction>,
    name: Option<String>,
    arguments: Option<RawArguments>,
}

fn decode_arguments(raw: Option<RawArguments>) -> Result<BTreeMap<String, Json>, CallParseError> {
    match raw {
        None => Ok(BTreeMap::new()),
        Some(RawArguments::Object(m)) => Ok(m.0),
        Some(RawArguments::Encoded(s)) if s.trim().is_empty() => Ok(BTreeMap::new()),
        Some(RawArguments::Encoded(s)) => serde_json::from_str::<UniqueMap>(&s)
            .map(|m| m.0)
            .map_err(|e| malformed(format!("arguments: {e}"))),
    }
}

/// Locate fenced call blocks: (payload, terminated) per block, in order.
fn blocks(text: &str) -> Vec<(String, bool)> {
    let mut out = Vec::new();
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        if line.trim() != CALL_FENCE {
            continue;
        }
        let mut payload = Vec::new();
        let mut closed = false;
        for inner in lines.by_ref() {
            if inner.trim() == CLOSE_FENCE {
                closed = true;
                break;
            }
            payload.push(inner);
        }
        out.push((payload.join("\n"), closed));
    }
    out
}

pub fn call_block_count(text: &str) -> usize {
    blocks(text).len()
}

/// Parse a model turn. `Ok(None)` means a plain reply with no call in it.
pub fn parse_tool_call(model_output: &str, mode: CallMode) -> Result<Option<ToolCall>, CallParseError> {
    match mode {
        CallMode::Prompted => parse_prompted(model_output),
        CallMode::Native => parse_native(model_output),
    }
}

fn parse_prompted(text: &str) -> Result<Option<ToolCall>, CallParseError> {
    let found = blocks(text);
    let Some((payload, closed)) = found.first() else {
        return Ok(None);
    };
    if found.len() > 1 {
        tracing::warn!("{} tool_call blocks in one turn; only the first is honored", found.len());
    }
    if !closed {
        return Err(malformed("unterminated tool_call block"));
    }
    let parsed: BlockPayload = serde_json::from_str(payload).map_err(|e| malformed(e.to_string()))?;
    if parsed.tool.trim().is_empty() {
        return Err(malformed("empty tool name"));
    }
    Ok(Some(ToolCall {
        tool: parsed.tool,
        arguments: parsed.arguments.0,
        raw: text.to_string(),
        id: None,
    }))
}

fn parse_native(payload: &str) -> Result<Option<ToolCall>, CallParseError> {
    if payload.trim().is_empty() {
        return Ok(None);
    }
    let parsed: NativePayload = serde_json::from_str(payload).map_err(|e| malformed(e.to_string()))?;
    let (name, args) = match (parsed.function, parsed.name) {
        (Some(f), _) => (f.name, f.arguments),
        (None, Some(n)) => (n, parsed.arguments),
        (None, None) => return Err(malformed("payload has no function name")),
    };
    if name.trim().is_empty() {
        return Err(malformed("empty tool name"));
    }
    Ok(Some(ToolCall {
        tool: name,
        arguments: decode_arguments(args)?,
        raw: payload.to_string(),
        id: parsed.id,
    }))
}

pub fn render_call_block(call: &ToolCall) -> String {
    let payload = serde_json::json!({
        "tool": call.tool,
        "arguments": call.arguments,
    });
    format!("{CALL_FENCE}\n{payload}\n{CLOSE_FENCE}")
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// System-prompt section documenting the call grammar and every tool.
pub fn prompted_tool_instructions(tools: &[ToolSchema]) -> String {
    let mut out = String::from("# Tools\n");
    if tools.is_empty() {
        out.push_str("You have no tools. Answer in plain text.\n");
        return out;
    }
    out.push_str(
        "To use a tool, reply with exactly one block in this form and nothing after it:\n\
         ```tool_call\n\
         {\"tool\": \"<tool name>\", \"arguments\": {\"<parameter>\": <value>}}\n\
         ```\n\
         Only the tools listed below exist. When you are done, reply in plain text without a block.\n",
    );
    for t in tools {
        out.push('\n');
        out.push_str(TOOL_HEADING);
        out.push_str(&t.name);
        out.push('\n');
        out.push_str(&one_line(&t.description));
        out.push('\n');
        if t.parameters.is_empty() {
            out.push_str("parameters: none\n");
            continue;
        }
        out.push_str("parameters:\n");
        for p in &t.parameters {
            let req = if p.required { "required" } else { "optional" };
            out.push_str(&format!("- {} ({}, {req})", p.name, p.type_tag));
            if !p.description.is_empty() {
                out.push_str(": ");
                out.push_str(&one_line(&p.description));
            }
            out.push('\n');
        }
    }
    out
}

/// Tool names documented in a prompt produced by [`prompted_tool_instructions`].
pub fn documented_tool_names(prompt: &str) -> Vec<String> {
    prompt
        .lines()
        .filter_map(|l| l.strip_prefix(TOOL_HEADING))
        .map(|s| s.trim().to_string())
        .collect()
}
