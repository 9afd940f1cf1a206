//! The on-disk context/agent/tool layer.
//!
//! A team directory holds exactly one `.ctx` file, any number of `.npc`
//! files, a `jinxes/` subdirectory of `.jinx` files (nested folders are
//! flattened by declared name), and sub-team directories that carry their
//! own `.ctx`.

mod builtin;
mod parse;
mod team;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde_json::Value as Json;
use thiserror::Error;

pub use builtin::{builtin_catalog, builtin_jinx, bundled_team};
pub use parse::{parse_context, parse_jinx, parse_npc};
pub(crate) use parse::is_entity_name;
pub use team::{load_team, resolve_jinx, validate_team, Diagnostic, NpcHandle, Scope, Team};

/// Type tag of a Jinx input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TypeTag {
    String,
    Integer,
    Number,
    Boolean,
    List,
}

impl TypeTag {
    pub const ALL: [TypeTag; 5] = [
        TypeTag::String,
        TypeTag::Integer,
        TypeTag::Number,
        TypeTag::Boolean,
        TypeTag::List,
    ];

    pub fn parse(tag: &str) -> Option<TypeTag> {
        match tag {
            "string" => Some(TypeTag::String),
            "integer" => Some(TypeTag::Integer),
            "number" => Some(TypeTag::Number),
            "boolean" => Some(TypeTag::Boolean),
            "list" => Some(TypeTag::List),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TypeTag::String => "string",
            TypeTag::Integer => "integer",
            TypeTag::Number => "number",
            TypeTag::Boolean => "boolean",
            TypeTag::List => "list",
        }
    }

    /// Strict check, no coercion. Integers are accepted where a number is expected.
    pub fn accepts(self, value: &Json) -> bool {
        match self {
            TypeTag::String => value.is_string(),
            TypeTag::Integer => value.is_i64() || value.is_u64(),
            TypeTag::Number => value.is_number(),
            TypeTag::Boolean => value.is_boolean(),
            TypeTag::List => value.is_array(),
        }
    }

    /// Lossless coercion: strings that parse exactly as the target scalar are
    /// converted; anything else that is not already acceptable is rejected.
    pub fn coerce(self, value: &Json) -> Option<Json> {
        if self.accepts(value) {
            return Some(value.clone());
        }
        let text = value.as_str()?;
        match self {
            TypeTag::Integer => text.parse::<i64>().ok().map(Json::from),
            TypeTag::Number => {
                if let Ok(i) = text.parse::<i64>() {
                    return Some(Json::from(i));
                }
                let f = text.parse::<f64>().ok().filter(|f| f.is_finite())?;
                serde_json::Number::from_f64(f).map(Json::Number)
            }
            TypeTag::Boolean => match text {
                "true" => Some(Json::Bool(true)),
                "false" => Some(Json::Bool(false)),
                _ => None,
            },
            TypeTag::String | TypeTag::List => None,
        }
    }
}

impl fmt::Display for TypeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputDecl {
    pub name: String,
    pub type_tag: TypeTag,
    pub required: bool,
    pub default: Option<Json>,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDef {
    pub name: String,
    /// Built-in engine id or the name of another Jinx.
    pub engine: String,
    pub body: String,
    /// Template-valued arguments, passed when the engine is a Jinx.
    pub args: Option<BTreeMap<String, String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JinxDef {
    pub name: String,
    pub description: String,
    pub inputs: Vec<InputDecl>,
    pub steps: Vec<StepDef>,
    pub source_path: PathBuf,
}

impl JinxDef {
    pub fn input(&self, name: &str) -> Option<&InputDecl> {
        self.inputs.iter().find(|i| i.name == name)
    }

    /// First required input, falling back to the first input.
    pub fn primary_input(&self) -> Option<&InputDecl> {
        self.inputs
            .iter()
            .find(|i| i.required)
            .or_else(|| self.inputs.first())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpcDef {
    pub name: String,
    pub directive: String,
    /// Falls back to the team context default when absent.
    pub model: Option<String>,
    pub provider: Option<String>,
    /// Tool catalog and permission set, in presentation order.
    pub jinx_list: Vec<String>,
    pub source_path: PathBuf,
}

impl NpcDef {
    pub fn directive_summary(&self) -> &str {
        self.directive
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextDef {
    pub orchestrator: String,
    pub description: String,
    pub env: BTreeMap<String, String>,
    pub default_model: Option<String>,
    pub default_provider: Option<String>,
    pub source_path: PathBuf,
}

#[derive(Debug, Error)]
pub enum CatError {
    #[error("{origin}: malformed document: {message}")]
    MalformedDocument { origin: String, message: String },
    #[error("{origin}: unknown key `{key}` in {section}")]
    UnknownKey {
        origin: String,
        section: String,
        key: String,
    },
    #[error("{origin}: missing field `{field}`")]
    MissingField { origin: String, field: String },
    #[error("{origin}: invalid field `{field}`: {message}")]
    InvalidField {
        origin: String,
        field: String,
        message: String,
    },
    #[error("{origin}: duplicate name `{name}`")]
    DuplicateName { origin: String, name: String },
    #[error("{origin}: input `{input}` has unknown type tag `{tag}`")]
    BadTypeTag {
        origin: String,
        input: String,
        tag: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{dir}: no context (.ctx) file")]
    NoContextFile { dir: String },
    #[error("{dir}: more than one context file: {files:?}")]
    MultipleContextFiles { dir: String, files: Vec<String> },
    #[error("jinx `{name}` defined twice: {first} and {second}")]
    DuplicateJinxName {
        name: String,
        first: String,
        second: String,
    },
    #[error("{dir}: orchestrator `{name}` is not an NPC of this team")]
    UnresolvedOrchestrator { dir: String, name: String },
    #[error("{dir}: `{name}` is both an NPC and a sub-team")]
    NameCollision { dir: String, name: String },
    #[error("unknown jinx `{name}`")]
    UnknownJinx { name: String },
}
