//! Line dispatch for the interactive shell.
//!
//! A slash command runs a Jinx through exactly the path an authorized agent
//! call takes: argument coercion against the same schema, then
//! [`Runtime::invoke`] with the same workdir and environment.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde_json::Value as Json;
use thiserror::Error;

use crate::cat_model::{load_team, validate_team, CatError, JinxDef, NpcHandle, Scope};
use crate::jinx_engine::{ExecError, JinxResult};
use crate::team_orchestrator::{Conversation, OrchestratorError, Runtime};
use crate::tool_schema::{coerce_arguments, derive_schema, EnforceError};
use crate::TypeTag;

const HELP: &str = "\
Commands:
  /npc <name>       talk to one NPC (no name: back to orchestrator routing)
  /team <dir>       load a team directory
  /jinxes           list Jinxes invocable from the current scope
  /trace            show the last conversation's event trace
  /help             this text
  /exit             leave the shell
  /<jinx> k=v ...   run a Jinx directly; a lone unkeyed value binds to its first required input
Anything else is sent to the current NPC, or routed by the orchestrator when none is selected.";

#[derive(Debug, Error)]
pub enum ShellError {
    #[error("unknown jinx `{name}` (try /jinxes)")]
    UnknownJinx { name: String },
    #[error("unknown command `/{name}` (try /help)")]
    UnknownCommand { name: String },
    #[error("{reason}\n{usage}")]
    BadArgs { reason: String, usage: String },
    #[error(transparent)]
    Load(#[from] CatError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

pub struct ShellState {
    pub runtime: Runtime,
    pub current_npc: Option<NpcHandle>,
    pub history: Vec<Conversation>,
    pub verbosity: u8,
}

/// Rendered result of one dispatched line.
#[derive(Debug, Clone)]
pub struct DispatchOutput {
    pub text: String,
    pub success: bool,
    /// Set for slash invocations of a Jinx.
    pub result: Option<JinxResult>,
}

impl DispatchOutput {
    fn ok(text: impl Into<String>) -> Self {
        DispatchOutput {
            text: text.into(),
            success: true,
            result: None,
        }
    }
}

impl ShellState {
    pub fn new(runtime: Runtime) -> Self {
        ShellState {
            runtime,
            current_npc: None,
            history: Vec::new(),
            verbosity: 0,
        }
    }

    /// Scope that slash commands resolve in: the current NPC's team, else the root.
    pub fn scope(&self) -> Scope<'_> {
        self.current_npc
            .as_ref()
            .and_then(|h| self.runtime.team.scope_at(&h.team_path))
            .unwrap_or_else(|| self.runtime.team.scope())
    }

    pub fn prompt(&self) -> String {
        match &self.current_npc {
            Some(h) => format!("{h}> "),
            None => format!("{}> ", self.runtime.team.name),
        }
    }
}

/// Split `/name rest` into the command name and the argument text.
fn split_command(line: &str) -> (&str, &str) {
    let body = line.trim_start().trim_start_matches('/');
    match body.find(char::is_whitespace) {
        Some(i) => (&body[..i], body[i..].trim()),
        None => (body, ""),
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Text-level value for one slash argument; list inputs accept a JSON array or comma-separated items.
fn slash_value(jinx: &JinxDef, key: &str, raw: String) -> Json {
    match jinx.input(key).map(|i| i.type_tag) {
        Some(TypeTag::List) => match serde_json::from_str::<Json>(&raw) {
            Ok(v @ Json::Array(_)) => v,
            _ => Json::Array(
                raw.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| Json::String(s.to_string()))
                    .collect(),
            ),
        },
        _ => Json::String(raw),
    }
}

/// Parse `key=value` tokens (shell quoting) into raw arguments for `jinx`.
pub fn parse_slash_args(jinx: &JinxDef, text: &str) -> Result<BTreeMap<String, Json>, ShellError> {
    let usage = || derive_schema(jinx).usage();
    let tokens = shlex::split(text).ok_or_else(|| ShellError::BadArgs {
        reason: "unbalanced quotes".into(),
        usage: usage(),
    })?;
    let mut args = BTreeMap::new();
    let mut positional: Vec<String> = Vec::new();
    for token in tokens {
        match token.split_once('=') {
            Some((key, value)) if is_identifier(key) => {
                if !positional.is_empty() {
                    return Err(ShellError::BadArgs {
                        reason: format!("`{key}=` follows an unkeyed value; put key=value pairs first"),
                        usage: usage(),
                    });
                }
                if args.insert(key.to_string(), slash_value(jinx, key, value.to_string())).is_some() {
                    return Err(ShellError::BadArgs {
                        reason: format!("argument `{key}` given twice"),
                        usage: usage(),
                    });
                }
            }
            _ => positional.push(token),
        }
    }
    if !positional.is_empty() {
        let primary = jinx.primary_input().ok_or_else(|| ShellError::BadArgs {
            reason: format!("`{}` has no required input to take an unkeyed value", jinx.name),
            usage: usage(),
        })?;
        if args.contains_key(&primary.name) {
            return Err(ShellError::BadArgs {
                reason: format!("`{}` given both by name and as an unkeyed value", primary.name),
                usage: usage(),
            });
        }
        let joined = positional.join(" ");
        args.insert(primary.name.clone(), slash_value(jinx, &primary.name, joined));
    }
    Ok(args)
}

fn run_slash(name: &str, rest: &str, state: &mut ShellState) -> Result<DispatchOutput, ShellError> {
    let scope = state.scope();
    let jinx = scope.lookup(name).ok_or_else(|| ShellError::UnknownJinx { name: name.into() })?;
    let raw = parse_slash_args(&jinx, rest)?;
    let args = coerce_arguments(&jinx, &raw).map_err(|e: EnforceError| ShellError::BadArgs {
        reason: e.to_string(),
        usage: derive_schema(&jinx).usage(),
    })?;
    let rt = &state.runtime;
    let binding = match &state.current_npc {
        Some(h) => {
            let (npc_scope, npc) = rt.scope_of(h)?;
            rt.binding_for(npc, &npc_scope).ok()
        }
        None => rt.scope_binding(&scope),
    };
    let result = rt.invoke(&jinx, &args, &scope, binding.as_ref())?;
    let mut text = String::new();
    if state.verbosity > 0 {
        for o in &result.outputs {
            text.push_str(&format!("[{}] {}\n", o.step_name, o.value.display()));
        }
    }
    text.push_str(&result.render());
    Ok(DispatchOutput {
        text,
        success: result.is_ok(),
        result: Some(result),
    })
}

fn converse(line: &str, state: &mut ShellState) -> Result<DispatchOutput, ShellError> {
    let rt = &state.runtime;
    let (npc_name, outcome) = match &state.current_npc {
        Some(h) => {
            let history = state
                .history
                .last()
                .filter(|c| c.npc == h.name)
                .map(|c| c.messages.clone())
                .unwrap_or_default();
            (h.name.clone(), rt.continue_conversation(h, &history, line)?)
        }
        None => {
            let (h, outcome) = rt.respond(line)?;
            (h.name, outcome)
        }
    };
    let mut text = String::new();
    if state.verbosity > 0 {
        for e in outcome.trace() {
            text.push_str(&e.summary());
            text.push('\n');
        }
    }
    if state.current_npc.is_none() {
        text.push_str(&format!("{npc_name}: "));
    }
    text.push_str(&outcome.reply);
    if outcome.exhausted {
        text.push_str("\n(turn budget exhausted)");
    }
    let success = !outcome.exhausted;
    state.history.push(outcome.conversation);
    Ok(DispatchOutput {
        text,
        success,
        result: None,
    })
}

fn list_jinxes(state: &ShellState) -> String {
    let scope = state.scope();
    scope
        .visible_names()
        .into_iter()
        .filter_map(|n| scope.lookup(&n))
        .map(|j| format!("/{:<16} {}", j.name, j.description.lines().next().unwrap_or("")))
        .collect::<Vec<_>>()
        .join("\n")
}

fn show_trace(state: &ShellState) -> String {
    match state.history.last() {
        None => "no conversation yet".into(),
        Some(c) if state.verbosity >= 2 => serde_json::to_string_pretty(&c.trace).unwrap_or_default(),
        Some(c) => c.trace.iter().map(|e| e.summary()).collect::<Vec<_>>().join("\n"),
    }
}

fn switch_team(dir: &str, state: &mut ShellState) -> Result<DispatchOutput, ShellError> {
    if dir.is_empty() {
        return Err(ShellError::BadArgs {
            reason: "missing directory".into(),
            usage: "usage: /team <dir>".into(),
        });
    }
    let team = load_team(Path::new(dir))?;
    let mut notes: Vec<String> = team.warnings.clone();
    notes.extend(validate_team(&team).iter().map(|d| d.to_string()));
    let name = team.name.clone();
    state.runtime.team = Arc::new(team);
    state.current_npc = None;
    state.history.clear();
    notes.push(format!("loaded team `{name}`"));
    Ok(DispatchOutput::ok(notes.join("\n")))
}

/// Execute one shell line against `state`.
pub fn dispatch(line: &str, state: &mut ShellState) -> Result<DispatchOutput, ShellError> {
    let line = line.trim();
    if line.is_empty() {
        return Ok(DispatchOutput::ok(""));
    }
    if !line.starts_with('/') {
        return converse(line, state);
    }
    let (name, rest) = split_command(line);
    match name {
        "help" => Ok(DispatchOutput::ok(HELP)),
        "jinxes" => Ok(DispatchOutput::ok(list_jinxes(state))),
        "trace" => Ok(DispatchOutput::ok(show_trace(state))),
        "team" => switch_team(rest, state),
        "npc" if rest.is_empty() => {
            state.current_npc = None;
            Ok(DispatchOutput::ok("routing through the orchestrator"))
        }
        "npc" => {
            let handle = state.runtime.find_npc(rest)?;
            let text = format!("now talking to {handle}");
            state.current_npc = Some(handle);
            Ok(DispatchOutput::ok(text))
        }
        "" => Err(ShellError::UnknownCommand { name: String::new() }),
        _ if crate::cat_model::is_entity_name(name) => run_slash(name, rest, state),
        _ => Err(ShellError::UnknownCommand { name: name.into() }),
    }
}
