use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde_json::Value as Json;
use serde_yaml::{Mapping, Value as Yaml};

use super::{CatError, ContextDef, InputDecl, JinxDef, NpcDef, StepDef, TypeTag};

const JINX_KEYS: &[&str] = &["jinx_name", "description", "inputs", "steps"];
const INPUT_KEYS: &[&str] = &["name", "type", "required", "default", "description"];
const STEP_KEYS: &[&str] = &["name", "engine", "code", "args"];
const NPC_KEYS: &[&str] = &["name", "primary_directive", "model", "provider", "jinxs"];
const CTX_KEYS: &[&str] = &["orchestrator", "description", "env", "model", "provider"];

/// A YAML mapping with the origin attached to every error it produces.
struct Doc<'a> {
    origin: &'a str,
    section: String,
    map: &'a Mapping,
}

impl<'a> Doc<'a> {
    fn new(origin: &'a str, section: impl Into<String>, value: &'a Yaml) -> Result<Self, CatError> {
        let section = section.into();
        match value {
            Yaml::Mapping(map) => Ok(Doc {
                origin,
                section,
                map,
            }),
            _ => Err(CatError::MalformedDocument {
                origin: origin.to_string(),
                message: format!("{section} must be a mapping"),
            }),
        }
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<(), CatError> {
        for key in self.map.keys() {
            let key_text = match key {
                Yaml::String(s) => s.clone(),
                other => yaml_scalar_text(other).unwrap_or_else(|| "<non-scalar>".into()),
            };
            if !allowed.contains(&key_text.as_str()) {
                return Err(CatError::UnknownKey {
                    origin: self.origin.to_string(),
                    section: self.section.clone(),
                    key: key_text,
                });
            }
        }
        Ok(())
    }

    fn field(&self, key: &str) -> String {
        if self.section == "document" {
            key.to_string()
        } else {
            format!("{}.{key}", self.section)
        }
    }

    fn get(&self, key: &str) -> Option<&'a Yaml> {
        self.map.get(key).filter(|v| !v.is_null())
    }

    fn invalid(&self, key: &str, message: impl Into<String>) -> CatError {
        CatError::InvalidField {
            origin: self.origin.to_string(),
            field: self.field(key),
            message: message.into(),
        }
    }

    fn opt_text(&self, key: &str) -> Result<Option<String>, CatError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => yaml_scalar_text(v)
                .map(Some)
                .ok_or_else(|| self.invalid(key, "expected a scalar")),
        }
    }

    fn req_text(&self, key: &str) -> Result<String, CatError> {
        match self.opt_text(key)? {
            Some(t) if !t.trim().is_empty() => Ok(t),
            _ => Err(CatError::MissingField {
                origin: self.origin.to_string(),
                field: self.field(key),
            }),
        }
    }

    fn opt_list(&self, key: &str) -> Result<Option<&'a Vec<Yaml>>, CatError> {
        match self.get(key) {
            None => Ok(None),
            Some(Yaml::Sequence(seq)) => Ok(Some(seq)),
            Some(_) => Err(self.invalid(key, "expected a list")),
        }
    }

    fn opt_map(&self, key: &str) -> Result<Option<&'a Mapping>, CatError> {
        match self.get(key) {
            None => Ok(None),
            Some(Yaml::Mapping(m)) => Ok(Some(m)),
            Some(_) => Err(self.invalid(key, "expected a mapping")),
        }
    }
}

fn yaml_scalar_text(v: &Yaml) -> Option<String> {
    match v {
        Yaml::String(s) => Some(s.clone()),
        Yaml::Number(n) => Some(n.to_string()),
        Yaml::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn load_yaml(source: &str, origin: &str) -> Result<Yaml, CatError> {
    let value: Yaml = serde_yaml::from_str(source).map_err(|e| CatError::MalformedDocument {
        origin: origin.to_string(),
        message: e.to_string(),
    })?;
    if value.is_null() {
        return Err(CatError::MalformedDocument {
            origin: origin.to_string(),
            message: "empty document".into(),
        });
    }
    Ok(value)
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

pub(crate) fn is_entity_name(s: &str) -> bool {
    !s.is_empty()
        && s
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

fn check_entity_name(origin: &str, field: &str, name: &str) -> Result<(), CatError> {
    if is_entity_name(name) {
        Ok(())
    } else {
        Err(CatError::InvalidField {
            origin: origin.into(),
            field: field.into(),
            message: format!("`{name}` is not a valid name"),
        })
    }
}

/// Parse a `.jinx` document.
pub fn parse_jinx(source: &str, origin: &Path) -> Result<JinxDef, CatError> {
    let origin_text = origin.display().to_string();
    let o = origin_text.as_str();
    let root = load_yaml(source, o)?;
    let doc = Doc::new(o, "document", &root)?;
    doc.check_keys(JINX_KEYS)?;

    let name = doc.req_text("jinx_name")?;
    check_entity_name(o, "jinx_name", &name)?;
    let description = doc.req_text("description")?;

    let mut seen = BTreeSet::new();
    let mut inputs = Vec::new();
    for (i, raw) in doc.opt_list("inputs")?.into_iter().flatten().enumerate() {
        let input = parse_input(o, i, raw)?;
        if !seen.insert(input.name.clone()) {
            return Err(CatError::DuplicateName {
                origin: o.into(),
                name: input.name,
            });
        }
        inputs.push(input);
    }

    let raw_steps = doc.opt_list("steps")?.ok_or_else(|| CatError::MissingField {
        origin: o.into(),
        field: "steps".into(),
    })?;
    if raw_steps.is_empty() {
        return Err(CatError::MissingField {
            origin: o.into(),
            field: "steps".into(),
        });
    }
    let mut steps = Vec::new();
    for (i, raw) in raw_steps.iter().enumerate() {
        let step = parse_step(o, i, raw)?;
        if !seen.insert(step.name.clone()) {
            return Err(CatError::DuplicateName {
                origin: o.into(),
                name: step.name,
            });
        }
        steps.push(step);
    }

    Ok(JinxDef {
        name,
        description,
        inputs,
        steps,
        source_path: origin.to_path_buf(),
    })
}

fn parse_input(origin: &str, index: usize, raw: &Yaml) -> Result<InputDecl, CatError> {
    let doc = Doc::new(origin, format!("inputs[{index}]"), raw)?;
    doc.check_keys(INPUT_KEYS)?;
    let name = doc.req_text("name")?;
    if !is_identifier(&name) {
        return Err(doc.invalid("name", format!("`{name}` is not an identifier")));
    }
    let tag_text = doc.opt_text("type")?.unwrap_or_else(|| "string".into());
    let type_tag = TypeTag::parse(&tag_text).ok_or_else(|| CatError::BadTypeTag {
        origin: origin.into(),
        input: name.clone(),
        tag: tag_text.clone(),
    })?;
    let default = match doc.get("default") {
        None => None,
        Some(v) => {
            let json = serde_json::to_value(v).map_err(|e| doc.invalid("default", e.to_string()))?;
            if !type_tag.accepts(&json) {
                return Err(doc.invalid(
                    "default",
                    format!("default {json} does not match type {type_tag}"),
                ));
            }
            Some(json)
        }
    };
    let required = match doc.get("required") {
        None => default.is_none(),
        Some(Yaml::Bool(b)) => *b,
        Some(_) => return Err(doc.invalid("required", "expected true or false")),
    };
    if !required && default.is_none() {
        return Err(doc.invalid("default", "optional inputs must declare a default"));
    }
    let description = doc.opt_text("description")?.unwrap_or_default();
    Ok(InputDecl {
        name,
        type_tag,
        required,
        default,
        description,
    })
}

fn parse_step(origin: &str, index: usize, raw: &Yaml) -> Result<StepDef, CatError> {
    let doc = Doc::new(origin, format!("steps[{index}]"), raw)?;
    doc.check_keys(STEP_KEYS)?;
    let name = doc.req_text("name")?;
    if !is_identifier(&name) {
        return Err(doc.invalid("name", format!("`{name}` is not an identifier")));
    }
    let engine = doc.req_text("engine")?;
    let body = doc.opt_text("code")?.unwrap_or_default();
    let args = match doc.opt_map("args")? {
        None => None,
        Some(map) => {
            let mut args = BTreeMap::new();
            for (k, v) in map {
                let key = yaml_scalar_text(k).ok_or_else(|| doc.invalid("args", "keys must be scalars"))?;
                let value = if v.is_null() {
                    String::new()
                } else {
                    yaml_scalar_text(v)
                        .ok_or_else(|| doc.invalid("args", format!("value of `{key}` must be a scalar template")))?
                };
                args.insert(key, value);
            }
            Some(args)
        }
    };
    Ok(StepDef {
        name,
        engine,
        body,
        args,
    })
}

/// Parse a `.npc` document.
pub fn parse_npc(source: &str, origin: &Path) -> Result<NpcDef, CatError> {
    let origin_text = origin.display().to_string();
    let o = origin_text.as_str();
    let root = load_yaml(source, o)?;
    let doc = Doc::new(o, "document", &root)?;
    doc.check_keys(NPC_KEYS)?;
    let name = doc.req_text("name")?;
    check_entity_name(o, "name", &name)?;
    let directive = doc.req_text("primary_directive")?;
    let model = doc.opt_text("model")?;
    let provider = doc.opt_text("provider")?;
    let mut jinx_list = Vec::new();
    let mut seen = BTreeSet::new();
    for v in doc.opt_list("jinxs")?.into_iter().flatten() {
        let entry = yaml_scalar_text(v).ok_or_else(|| doc.invalid("jinxs", "entries must be names"))?;
        if !seen.insert(entry.clone()) {
            return Err(CatError::DuplicateName {
                origin: o.into(),
                name: entry,
            });
        }
        jinx_list.push(entry);
    }
    Ok(NpcDef {
        name,
        directive,
        model,
        provider,
        jinx_list,
        source_path: origin.to_path_buf(),
    })
}

/// Parse a `.ctx` document.
pub fn parse_context(source: &str, origin: &Path) -> Result<ContextDef, CatError> {
    let origin_text = origin.display().to_string();
    let o = origin_text.as_str();
    let root = load_yaml(source, o)?;
    let doc = Doc::new(o, "document", &root)?;
    doc.check_keys(CTX_KEYS)?;
    let orchestrator = doc.req_text("orchestrator")?;
    let description = doc.opt_text("description")?.unwrap_or_default();
    let mut env = BTreeMap::new();
    for (k, v) in doc.opt_map("env")?.into_iter().flatten() {
        let key = yaml_scalar_text(k).ok_or_else(|| doc.invalid("env", "keys must be scalars"))?;
        let value = if v.is_null() {
            String::new()
        } else {
            yaml_scalar_text(v).ok_or_else(|| doc.invalid("env", format!("`{key}` must be a scalar")))?
        };
        env.insert(key, value);
    }
    Ok(ContextDef {
        orchestrator,
        description,
        env,
        default_model: doc.opt_text("model")?,
        default_provider: doc.opt_text("provider")?,
        source_path: origin.to_path_buf(),
    })
}

fn json_to_yaml(v: &Json) -> Yaml {
    serde_yaml::to_value(v).unwrap_or(Yaml::Null)
}

fn set(map: &mut Mapping, key: &str, value: Yaml) {
    map.insert(Yaml::String(key.into()), value);
}

impl JinxDef {
    /// Serialize back to the `.jinx` format.
    pub fn to_yaml(&self) -> String {
        let mut root = Mapping::new();
        set(&mut root, "jinx_name", Yaml::String(self.name.clone()));
        set(&mut root, "description", Yaml::String(self.description.clone()));
        let inputs = self
            .inputs
            .iter()
            .map(|i| {
                let mut m = Mapping::new();
                set(&mut m, "name", Yaml::String(i.name.clone()));
                set(&mut m, "type", Yaml::String(i.type_tag.as_str().into()));
                set(&mut m, "required", Yaml::Bool(i.required));
                if let Some(d) = &i.default {
                    set(&mut m, "default", json_to_yaml(d));
                }
                if !i.description.is_empty() {
                    set(&mut m, "description", Yaml::String(i.description.clone()));
                }
                Yaml::Mapping(m)
            })
            .collect();
        set(&mut root, "inputs", Yaml::Sequence(inputs));
        let steps = self
            .steps
            .iter()
            .map(|s| {
                let mut m = Mapping::new();
                set(&mut m, "name", Yaml::String(s.name.clone()));
                set(&mut m, "engine", Yaml::String(s.engine.clone()));
                set(&mut m, "code", Yaml::String(s.body.clone()));
                if let Some(args) = &s.args {
                    let mut a = Mapping::new();
                    for (k, v) in args {
                        set(&mut a, k, Yaml::String(v.clone()));
                    }
                    set(&mut m, "args", Yaml::Mapping(a));
                }
                Yaml::Mapping(m)
            })
            .collect();
        set(&mut root, "steps", Yaml::Sequence(steps));
        serde_yaml::to_string(&Yaml::Mapping(root)).expect("mapping serializes")
    }
}

impl NpcDef {
    pub fn to_yaml(&self) -> String {
        let mut root = Mapping::new();
        set(&mut root, "name", Yaml::String(self.name.clone()));
        set(&mut root, "primary_directive", Yaml::String(self.directive.clone()));
        if let Some(m) = &self.model {
            set(&mut root, "model", Yaml::String(m.clone()));
        }
        if let Some(p) = &self.provider {
            set(&mut root, "provider", Yaml::String(p.clone()));
        }
        let list = self.jinx_list.iter().cloned().map(Yaml::String).collect();
        set(&mut root, "jinxs", Yaml::Sequence(list));
        serde_yaml::to_string(&Yaml::Mapping(root)).expect("mapping serializes")
    }
}

impl ContextDef {
    pub fn to_yaml(&self) -> String {
        let mut root = Mapping::new();
        set(&mut root, "orchestrator", Yaml::String(self.orchestrator.clone()));
        set(&mut root, "description", Yaml::String(self.description.clone()));
        let mut env = Mapping::new();
        for (k, v) in &self.env {
            set(&mut env, k, Yaml::String(v.clone()));
        }
        set(&mut root, "env", Yaml::Mapping(env));
        if let Some(m) = &self.default_model {
            set(&mut root, "model", Yaml::String(m.clone()));
        }
        if let Some(p) = &self.default_provider {
            set(&mut root, "provider", Yaml::String(p.clone()));
        }
        serde_yaml::to_string(&Yaml::Mapping(root)).expect("mapping serializes")
    }
}
