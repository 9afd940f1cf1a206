//! Tool schemas derived from Jinx definitions, per-NPC catalogs, tool-call
//! parsing and structural enforcement.
//!
//! A catalog is built from an NPC's Jinx list and nothing else. A call naming
//! any tool outside it is rejected before resolution ever happens.

mod grammar;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value as Json};
use thiserror::Error;

use crate::cat_model::{resolve_jinx, CatError, JinxDef, NpcDef, Scope, TypeTag};

pub use grammar::{
    call_block_count, documented_tool_names, parse_tool_call, prompted_tool_instructions, render_call_block, CallMode,
    CallParseError, CALL_FENCE,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolParameter {
    pub name: String,
    pub type_tag: TypeTag,
    pub required: bool,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    pub parameters: Vec<ToolParameter>,
}

fn json_schema_type(tag: TypeTag) -> Json {
    match tag {
        TypeTag::String => json!({"type": "string"}),
        TypeTag::Integer => json!({"type": "integer"}),
        TypeTag::Number => json!({"type": "number"}),
        TypeTag::Boolean => json!({"type": "boolean"}),
        TypeTag::List => json!({"type": "array"}),
    }
}

impl ToolSchema {
    /// OpenAI-style `{"type": "function", ...}` tool entry.
    pub fn to_openai(&self) -> Json {
        let mut properties = serde_json::Map::new();
        let mut required = Vec::new();
        for p in &self.parameters {
            let mut prop = json_schema_type(p.type_tag);
            if !p.description.is_empty() {
                prop["description"] = Json::String(p.description.clone());
            }
            properties.insert(p.name.clone(), prop);
            if p.required {
                required.push(Json::String(p.name.clone()));
            }
        }
        json!({
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": {
                    "type": "object",
                    "properties": properties,
                    "required": required,
                }
            }
        })
    }

    /// Slash-command usage text listing exactly the schema parameters.
    pub fn usage(&self) -> String {
        let mut line = format!("usage: /{}", self.name);
        for p in &self.parameters {
            if p.required {
                line.push_str(&format!(" {}=<{}>", p.name, p.type_tag));
            } else {
                line.push_str(&format!(" [{}=<{}>]", p.name, p.type_tag));
            }
        }
        let mut out = vec![line, format!("  {}", self.description.trim())];
        for p in &self.parameters {
            let req = if p.required { "required" } else { "optional" };
            let mut row = format!("  {} ({}, {req})", p.name, p.type_tag);
            if !p.description.is_empty() {
                row.push_str(": ");
                row.push_str(p.description.trim());
            }
            out.push(row);
        }
        out.join("\n")
    }
}

/// Only the description and inputs cross into the schema; steps never do.
pub fn derive_schema(jinx: &JinxDef) -> ToolSchema {
    ToolSchema {
        name: jinx.name.clone(),
        description: jinx.description.clone(),
        parameters: jinx
            .inputs
            .iter()
            .map(|i| ToolParameter {
                name: i.name.clone(),
                type_tag: i.type_tag,
                required: i.required,
                description: i.description.clone(),
            })
            .collect(),
    }
}

/// The tools one NPC can see and call, in Jinx-list order.
#[derive(Debug, Clone)]
pub struct Catalog {
    pub owner: String,
    pub tools: Vec<ToolSchema>,
    entries: Vec<Arc<JinxDef>>,
}

impl Catalog {
    pub fn from_jinxes(owner: impl Into<String>, jinxes: Vec<Arc<JinxDef>>) -> Catalog {
        Catalog {
            owner: owner.into(),
            tools: jinxes.iter().map(|j| derive_schema(j)).collect(),
            entries: jinxes,
        }
    }

    pub fn names(&self) -> Vec<&str> {
        self.tools.iter().map(|t| t.name.as_str()).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.iter().any(|t| t.name == name)
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    /// Corrective text shown to a model after a rejected call.
    pub fn listing(&self) -> String {
        if self.tools.is_empty() {
            "You have no tools; answer in plain text.".into()
        } else {
            format!("Available tools: {}.", self.names().join(", "))
        }
    }
}

pub fn build_catalog(npc: &NpcDef, scope: &Scope<'_>) -> Result<Catalog, CatError> {
    let jinxes = npc
        .jinx_list
        .iter()
        .map(|name| resolve_jinx(name, scope))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Catalog::from_jinxes(npc.name.clone(), jinxes))
}

/// A model's attempt to invoke a tool.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolCall {
    pub tool: String,
    pub arguments: BTreeMap<String, Json>,
    /// Model text (or native payload) the call was parsed from.
    pub raw: String,
    /// Provider-assigned id for native calls.
    pub id: Option<String>,
}

impl ToolCall {
    pub fn new(tool: impl Into<String>, arguments: BTreeMap<String, Json>) -> ToolCall {
        let mut call = ToolCall {
            tool: tool.into(),
            arguments,
            raw: String::new(),
            id: None,
        };
        call.raw = render_call_block(&call);
        call
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnforceError {
    #[error("tool `{tool}` does not exist for this agent")]
    UnknownTool { tool: String, available: Vec<String> },
    #[error("argument `{argument}` of `{tool}` expects {expected}, got {value}")]
    ArgumentTypeError {
        tool: String,
        argument: String,
        expected: String,
        value: String,
    },
    #[error("`{tool}` requires argument `{argument}`")]
    MissingRequiredArgument { tool: String, argument: String },
    #[error("`{tool}` has no argument `{argument}`")]
    UnknownArgument { tool: String, argument: String },
}

/// A call that passed enforcement, with arguments coerced to declared types.
#[derive(Debug, Clone)]
pub struct Authorized {
    pub jinx: Arc<JinxDef>,
    pub arguments: BTreeMap<String, Json>,
}

/// Check presence and coerce argument values against a Jinx's inputs.
pub fn coerce_arguments(jinx: &JinxDef, arguments: &BTreeMap<String, Json>) -> Result<BTreeMap<String, Json>, EnforceError> {
    let mut out = BTreeMap::new();
    for (name, value) in arguments {
        let decl = jinx.input(name).ok_or_else(|| EnforceError::UnknownArgument {
            tool: jinx.name.clone(),
            argument: name.clone(),
        })?;
        let coerced = decl.type_tag.coerce(value).ok_or_else(|| EnforceError::ArgumentTypeError {
            tool: jinx.name.clone(),
            argument: name.clone(),
            expected: decl.type_tag.to_string(),
            value: value.to_string(),
        })?;
        out.insert(name.clone(), coerced);
    }
    if let Some(missing) = jinx.inputs.iter().find(|i| i.required && !out.contains_key(&i.name)) {
        return Err(EnforceError::MissingRequiredArgument {
            tool: jinx.name.clone(),
            argument: missing.name.clone(),
        });
    }
    Ok(out)
}

/// Authorize a call against a catalog. Membership is decided by the catalog
/// alone; nothing outside it is ever looked up.
pub fn enforce(call: &ToolCall, catalog: &Catalog) -> Result<Authorized, EnforceError> {
    let jinx = catalog
        .entries
        .iter()
        .find(|j| j.name == call.tool)
        .cloned()
        .ok_or_else(|| EnforceError::UnknownTool {
            tool: call.tool.clone(),
            available: catalog.names().into_iter().map(String::from).collect(),
        })?;
    let arguments = coerce_arguments(&jinx, &call.arguments)?;
    Ok(Authorized { jinx, arguments })
}
