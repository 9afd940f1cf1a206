use std::path::PathBuf;

use serde::Serialize;
use serde_json::json;

use super::agent::{LoopHandler, LoopOutcome, LoopSpec, Next};
use super::{EventKind, OrchestratorError, Runtime, TraceEvent};
use crate::cat_model::{InputDecl, JinxDef, NpcHandle, Scope, StepDef, Team, TypeTag};
use crate::llm_gateway::ChatMessage;
use crate::tool_schema::{Authorized, Catalog};

/// Name of the synthetic routing tool.
pub const SELECT_ENTRY: &str = "select_entry";

/// Invalid selections tolerated before routing gives up.
const MAX_INVALID_SELECTIONS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Npc,
    SubTeam,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoutingEntry {
    pub name: String,
    pub description: String,
    pub kind: EntryKind,
}

/// What an orchestrator is allowed to see when routing. Sub-teams appear as
/// their context description only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoutingView {
    pub entries: Vec<RoutingEntry>,
}

impl RoutingView {
    pub fn get(&self, name: &str) -> Option<&RoutingEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|e| {
                let kind = match e.kind {
                    EntryKind::Npc => "agent",
                    EntryKind::SubTeam => "team",
                };
                format!("- {} ({kind}): {}", e.name, e.description)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub fn routing_view(team: &Team) -> RoutingView {
    let npcs = team.npcs.values().map(|n| RoutingEntry {
        name: n.name.clone(),
        description: n.directive_summary().to_string(),
        kind: EntryKind::Npc,
    });
    let subs = team.sub_teams.iter().map(|(name, sub)| RoutingEntry {
        name: name.clone(),
        description: sub.context.description.trim().to_string(),
        kind: EntryKind::SubTeam,
    });
    RoutingView {
        entries: npcs.chain(subs).collect(),
    }
}

fn selector_jinx(view: &RoutingView) -> JinxDef {
    JinxDef {
        name: SELECT_ENTRY.into(),
        description: "Hand the user's request to exactly one entry.".into(),
        inputs: vec![
            InputDecl {
                name: "entry".into(),
                type_tag: TypeTag::String,
                required: true,
                default: None,
                description: format!("One of: {}", view.names().join(", ")),
            },
            InputDecl {
                name: "rationale".into(),
                type_tag: TypeTag::String,
                required: false,
                default: Some(json!("")),
                description: "Why this entry fits the request.".into(),
            },
        ],
        steps: Vec::<StepDef>::new(),
        source_path: PathBuf::from("<routing>"),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RouteOutcome {
    /// Final NPC entry the request lands on.
    pub selection: RoutingEntry,
    pub handle: NpcHandle,
    pub rationale: String,
    /// Every entry chosen on the way down, outermost first.
    pub hops: Vec<String>,
    pub trace: Vec<TraceEvent>,
}

struct Selector<'v> {
    view: &'v RoutingView,
    invalid: usize,
    chosen: Option<(RoutingEntry, String)>,
}

impl Selector<'_> {
    fn pick(&mut self, name: &str, rationale: String) -> Next {
        match self.view.get(name) {
            Some(entry) => {
                self.chosen = Some((entry.clone(), rationale));
                Next::Done(name.to_string())
            }
            None => {
                self.invalid += 1;
                if self.invalid >= MAX_INVALID_SELECTIONS {
                    Next::Abort(OrchestratorError::NoSelection { attempts: self.invalid })
                } else {
                    Next::Correct(format!(
                        "`{name}` is not a valid entry. Call {SELECT_ENTRY} with one of: {}.",
                        self.view.names().join(", ")
                    ))
                }
            }
        }
    }
}

impl LoopHandler for Selector<'_> {
    fn on_call(&mut self, auth: &Authorized, _trace: &mut Vec<TraceEvent>) -> Next {
        let entry = auth.arguments.get("entry").and_then(|v| v.as_str()).unwrap_or_default().to_string();
        let rationale = auth
            .arguments
            .get("rationale")
            .and_then(|v| v.as_str())
            .unwrap_or_default()
            .to_string();
        self.pick(&entry, rationale)
    }

    fn on_text(&mut self, text: &str, _trace: &mut Vec<TraceEvent>) -> Next {
        self.pick(text.trim(), String::new())
    }
}

impl Runtime {
    /// Ask the root orchestrator who should handle `request`, descending into sub-teams.
    pub fn route(&self, request: &str) -> Result<RouteOutcome, OrchestratorError> {
        let mut trace = Vec::new();
        let mut hops = Vec::new();
        let mut scope = self.team.scope();
        loop {
            let (entry, rationale) = self.route_once(&scope, request, &mut trace)?;
            hops.push(entry.name.clone());
            match entry.kind {
                EntryKind::SubTeam => {
                    scope = scope.enter(&entry.name).ok_or_else(|| OrchestratorError::NoOrchestrator {
                        team: entry.name.clone(),
                    })?;
                }
                EntryKind::Npc => {
                    return Ok(RouteOutcome {
                        handle: NpcHandle {
                            team_path: scope.path(),
                            name: entry.name.clone(),
                        },
                        selection: entry,
                        rationale,
                        hops,
                        trace,
                    })
                }
            }
        }
    }

    fn route_once(
        &self,
        scope: &Scope<'_>,
        request: &str,
        trace: &mut Vec<TraceEvent>,
    ) -> Result<(RoutingEntry, String), OrchestratorError> {
        let team = scope.team();
        let orchestrator = team.orchestrator().ok_or_else(|| OrchestratorError::NoOrchestrator {
            team: team.name.clone(),
        })?;
        let binding = self.binding_for(orchestrator, scope)?;
        let view = routing_view(team);
        let catalog = Catalog::from_jinxes(orchestrator.name.clone(), vec![std::sync::Arc::new(selector_jinx(&view))]);
        let system = format!(
            "You are {}, the orchestrator of the {} team.\n{}\n\nDecide who should handle the user's request. \
             Call {SELECT_ENTRY} with the name of exactly one entry below.\n\nEntries:\n{}",
            orchestrator.name,
            team.name,
            orchestrator.directive.trim(),
            view.render()
        );
        let mut selector = Selector {
            view: &view,
            invalid: 0,
            chosen: None,
        };
        let outcome = self.run_loop(
            LoopSpec {
                actor: &orchestrator.name,
                binding: &binding,
                catalog: &catalog,
                messages: vec![ChatMessage::system(system), ChatMessage::user(request)],
            },
            &mut selector,
        )?;
        trace.extend(outcome.conversation.trace);
        let (entry, rationale) = selector.chosen.ok_or(OrchestratorError::NoSelection {
            attempts: selector.invalid.max(1),
        })?;
        trace.push(TraceEvent::new(
            &orchestrator.name,
            EventKind::Routed {
                selection: entry.name.clone(),
                kind: entry.kind,
                rationale: rationale.clone(),
            },
        ));
        Ok((entry, rationale))
    }

    /// Route a request and let the selected NPC answer it. When routing
    /// fails to select anything, the root orchestrator answers directly.
    pub fn respond(&self, request: &str) -> Result<(NpcHandle, LoopOutcome), OrchestratorError> {
        let (handle, mut prefix) = match self.route(request) {
            Ok(r) => (r.handle, r.trace),
            Err(OrchestratorError::NoSelection { attempts }) => {
                tracing::info!("routing made no valid selection after {attempts} attempts; orchestrator answers");
                let orch = &self.team.context.orchestrator;
                (
                    NpcHandle {
                        team_path: Vec::new(),
                        name: orch.clone(),
                    },
                    Vec::new(),
                )
            }
            Err(e) => return Err(e),
        };
        let mut outcome = self.agent_loop(&handle, request)?;
        prefix.append(&mut outcome.conversation.trace);
        outcome.conversation.trace = prefix;
        Ok((handle, outcome))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cat_model::bundled_team;
    use crate::llm_gateway::{ProviderRegistry, ScriptedProvider};
    use std::sync::Arc;

    #[test]
    fn bundled_view_lists_only_orchestrator() {
        let v = routing_view(&bundled_team());
        assert_eq!(v.names(), vec!["orchestrator"]);
        assert_eq!(v.entries[0].kind, EntryKind::Npc);
    }

    #[test]
    fn invalid_twice_is_no_selection_then_fallback() {
        let provider = Arc::new(ScriptedProvider::from_texts(&["nobody", "still nobody", "direct answer"]));
        let rt = Runtime::new(Arc::new(bundled_team()), ProviderRegistry::single(provider), std::env::temp_dir());
        let (handle, out) = rt.respond("hello").unwrap();
        assert_eq!(handle.name, "orchestrator");
        assert_eq!(out.reply, "direct answer");
    }

    #[test]
    fn plain_text_entry_name_is_accepted() {
        let provider = Arc::new(ScriptedProvider::from_texts(&["orchestrator"]));
        let rt = Runtime::new(Arc::new(bundled_team()), ProviderRegistry::single(provider.clone()), std::env::temp_dir());
        let r = rt.route("hi").unwrap();
        assert_eq!(r.selection.name, "orchestrator");
        let req = &provider.requests()[0];
        assert_eq!(crate::tool_schema::documented_tool_names(req.tool_prompt.as_deref().unwrap()), vec![SELECT_ENTRY]);
    }
}
