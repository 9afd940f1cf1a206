//! Agent runtime: the tool loop, orchestrator routing, delegation and skill
//! retrieval.
//!
//! Every tool call a model makes goes through `enforce` against the acting
//! NPC's catalog before anything runs, and runs through the same executor
//! path that slash commands use.

mod agent;
mod delegation;
mod routing;
mod skills;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::cat_model::{CatError, NpcDef, NpcHandle, Scope, Team};
use crate::jinx_engine::{ExecConfig, ExecError, JinxResult};
use crate::llm_gateway::{ChatMessage, ChatProvider, GatewayError, ProviderRegistry};
use crate::tool_schema::EnforceError;

pub use agent::LoopOutcome;
pub use delegation::{parse_verdict, DelegationOutcome, DelegationSpec, FeedbackMode, Verdict};
pub use routing::{routing_view, EntryKind, RouteOutcome, RoutingEntry, RoutingView, SELECT_ENTRY};
pub use skills::{headings, retrieve_skill_section, select_section, SkillError, TOC};

/// Model turns per agent loop unless configured otherwise.
pub const DEFAULT_TURN_BUDGET: usize = 12;

/// A conversation between a user and one NPC.
#[derive(Debug, Clone, Serialize)]
pub struct Conversation {
    pub npc: String,
    pub messages: Vec<ChatMessage>,
    pub turn_budget: usize,
    pub trace: Vec<TraceEvent>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceEvent {
    /// Seconds since the Unix epoch.
    pub at: f64,
    pub npc: String,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    ModelTurn {
        turn: usize,
        text: String,
        native_calls: usize,
    },
    ToolCallAuthorized {
        tool: String,
        arguments: serde_json::Value,
    },
    ToolCallRejected {
        tool: String,
        error: EnforceError,
    },
    MalformedCall {
        reason: String,
    },
    CorrectiveMessage {
        content: String,
    },
    ToolResult {
        tool: String,
        result: JinxResult,
    },
    ToolError {
        tool: String,
        error: ExecError,
    },
    Reply {
        text: String,
    },
    BudgetExhausted {
        turns: usize,
    },
    Routed {
        selection: String,
        kind: EntryKind,
        rationale: String,
    },
    Delegation {
        target: String,
        iteration: usize,
        satisfied: bool,
    },
}

pub(crate) fn now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl TraceEvent {
    pub(crate) fn new(npc: &str, kind: EventKind) -> Self {
        TraceEvent {
            at: now(),
            npc: npc.to_string(),
            kind,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            EventKind::ModelTurn { .. } => "model_turn",
            EventKind::ToolCallAuthorized { .. } => "tool_call_authorized",
            EventKind::ToolCallRejected { .. } => "tool_call_rejected",
            EventKind::MalformedCall { .. } => "malformed_call",
            EventKind::CorrectiveMessage { .. } => "corrective_message",
            EventKind::ToolResult { .. } => "tool_result",
            EventKind::ToolError { .. } => "tool_error",
            EventKind::Reply { .. } => "reply",
            EventKind::BudgetExhausted { .. } => "budget_exhausted",
            EventKind::Routed { .. } => "routed",
            EventKind::Delegation { .. } => "delegation",
        }
    }

    /// One-line human rendering for `/trace`.
    pub fn summary(&self) -> String {
        let body = match &self.kind {
            EventKind::ModelTurn { turn, text, native_calls } => {
                let first = text.lines().next().unwrap_or("");
                format!("turn {turn}: {first}{}", if *native_calls > 0 { " [native call]" } else { "" })
            }
            EventKind::ToolCallAuthorized { tool, arguments } => format!("{tool} {arguments}"),
            EventKind::ToolCallRejected { tool, error } => format!("{tool}: {error}"),
            EventKind::MalformedCall { reason } => reason.clone(),
            EventKind::CorrectiveMessage { content } => content.lines().next().unwrap_or("").to_string(),
            EventKind::ToolResult { tool, result } => format!("{tool} -> {:?}", result.status),
            EventKind::ToolError { tool, error } => format!("{tool}: {error}"),
            EventKind::Reply { text } => text.lines().next().unwrap_or("").to_string(),
            EventKind::BudgetExhausted { turns } => format!("after {turns} turns"),
            EventKind::Routed { selection, kind, .. } => format!("{selection} ({kind:?})"),
            EventKind::Delegation { target, iteration, satisfied } => {
                format!("{target} iteration {iteration}: {}", if *satisfied { "satisfied" } else { "unsatisfied" })
            }
        };
        format!("[{}] {}: {body}", self.npc, self.name())
    }
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Cat(#[from] CatError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("unknown NPC `{name}`")]
    UnknownNpc { name: String },
    #[error("no model configured for `{npc}` (set one in the NPC, the team context, or with --model)")]
    NoModel { npc: String },
    #[error("no provider configured for `{npc}` (set one in the NPC, the team context, or with --provider)")]
    NoProvider { npc: String },
    #[error("team `{team}` has no orchestrator")]
    NoOrchestrator { team: String },
    #[error("orchestrator did not select a valid entry after {attempts} attempts")]
    NoSelection { attempts: usize },
    #[error("delegation target `{target}` is neither an NPC nor a sub-team here")]
    UnknownTarget { target: String },
    #[error("invalid delegation: {message}")]
    InvalidDelegation { message: String },
    #[error("cancelled")]
    Cancelled,
}

/// Everything an agent loop needs besides the conversation itself.
pub struct Runtime {
    pub team: Arc<Team>,
    pub providers: ProviderRegistry,
    pub exec: ExecConfig,
    pub workdir: PathBuf,
    pub model_override: Option<String>,
    pub provider_override: Option<String>,
    pub turn_budget: usize,
    model_calls: AtomicUsize,
    tool_calls: AtomicUsize,
    rejected_calls: AtomicUsize,
}

/// Model and provider an NPC talks through.
#[derive(Clone)]
pub struct Binding {
    pub model: String,
    pub provider: Arc<dyn ChatProvider>,
}

impl Runtime {
    pub fn new(team: Arc<Team>, providers: ProviderRegistry, workdir: impl Into<PathBuf>) -> Self {
        Runtime {
            team,
            providers,
            exec: ExecConfig::default(),
            workdir: workdir.into(),
            model_override: None,
            provider_override: None,
            turn_budget: DEFAULT_TURN_BUDGET,
            model_calls: AtomicUsize::new(0),
            tool_calls: AtomicUsize::new(0),
            rejected_calls: AtomicUsize::new(0),
        }
    }

    pub fn with_exec(mut self, exec: ExecConfig) -> Self {
        self.exec = exec;
        self
    }

    pub fn with_turn_budget(mut self, budget: usize) -> Self {
        self.turn_budget = budget;
        self
    }

    pub fn with_overrides(mut self, model: Option<String>, provider: Option<String>) -> Self {
        self.model_override = model;
        self.provider_override = provider;
        self
    }

    /// Model calls made through this runtime so far.
    pub fn model_calls(&self) -> usize {
        self.model_calls.load(Ordering::SeqCst)
    }

    /// Jinx executions triggered by authorized agent tool calls.
    pub fn tool_calls(&self) -> usize {
        self.tool_calls.load(Ordering::SeqCst)
    }

    /// Tool calls refused by enforcement.
    pub fn rejected_calls(&self) -> usize {
        self.rejected_calls.load(Ordering::SeqCst)
    }

    pub(crate) fn count_model_call(&self) {
        self.model_calls.fetch_add(1, Ordering::SeqCst);
    }

    pub(crate) fn count_tool_call(&self) {
        self.tool_calls.fetch_add(1, Ordering::SeqCst);
    }

    pub(crate) fn count_rejection(&self) {
        self.rejected_calls.fetch_add(1, Ordering::SeqCst);
    }

    pub(crate) fn cancelled(&self) -> bool {
        self.exec
            .cancel
            .as_ref()
            .is_some_and(|c| c.load(Ordering::SeqCst))
    }

    pub fn scope_of(&self, handle: &NpcHandle) -> Result<(Scope<'_>, &NpcDef), OrchestratorError> {
        let unknown = || OrchestratorError::UnknownNpc {
            name: handle.to_string(),
        };
        let scope = self.team.scope_at(&handle.team_path).ok_or_else(unknown)?;
        let npc = scope.team().npcs.get(&handle.name).ok_or_else(unknown)?;
        Ok((scope, npc))
    }

    pub fn find_npc(&self, name: &str) -> Result<NpcHandle, OrchestratorError> {
        self.team
            .find_npc(name)
            .ok_or_else(|| OrchestratorError::UnknownNpc { name: name.into() })
    }

    /// Command-line overrides, then the NPC's own settings, then the nearest context default.
    pub fn binding_for(&self, npc: &NpcDef, scope: &Scope<'_>) -> Result<Binding, OrchestratorError> {
        let model = self
            .model_override
            .as_deref()
            .or(npc.model.as_deref())
            .or(scope.default_model())
            .ok_or_else(|| OrchestratorError::NoModel { npc: npc.name.clone() })?;
        self.binding_with(model, self.provider_id(npc, scope)?)
    }

    fn provider_id<'s>(&'s self, npc: &'s NpcDef, scope: &Scope<'s>) -> Result<&'s str, OrchestratorError> {
        self.provider_override
            .as_deref()
            .or(npc.provider.as_deref())
            .or(scope.default_provider())
            .ok_or_else(|| OrchestratorError::NoProvider { npc: npc.name.clone() })
    }

    pub(crate) fn binding_with(&self, model: &str, provider: &str) -> Result<Binding, OrchestratorError> {
        Ok(Binding {
            model: model.to_string(),
            provider: self.providers.provider(provider)?,
        })
    }

    /// Binding used when no NPC is acting (e.g. slash commands with no current NPC).
    pub fn scope_binding(&self, scope: &Scope<'_>) -> Option<Binding> {
        let model = self.model_override.as_deref().or(scope.default_model())?;
        let provider = self.provider_override.as_deref().or(scope.default_provider())?;
        self.binding_with(model, provider).ok()
    }
}
