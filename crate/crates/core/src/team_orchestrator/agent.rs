use std::cell::RefCell;
use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value as Json;

use super::delegation::DelegationOutcome;
use super::{Binding, Conversation, EventKind, OrchestratorError, Runtime, TraceEvent};
use crate::cat_model::{JinxDef, NpcDef, NpcHandle, Scope};
use crate::jinx_engine::{DelegateRequest, ExecContext, ExecError, Executor, JinxResult, ModelHooks};
use crate::llm_gateway::{complete, ChatMessage};
use crate::tool_schema::{build_catalog, enforce, parse_tool_call, Authorized, CallMode, CallParseError, Catalog};

#[derive(Debug, Clone, Serialize)]
pub struct LoopOutcome {
    pub reply: String,
    /// The turn budget ran out before the model produced a plain reply.
    pub exhausted: bool,
    pub conversation: Conversation,
    /// Calls that passed enforcement and were executed.
    pub tool_calls: usize,
    pub model_turns: usize,
}

impl LoopOutcome {
    pub fn trace(&self) -> &[TraceEvent] {
        &self.conversation.trace
    }
}

/// What the loop should do after a handler has looked at a model turn.
pub(crate) enum Next {
    /// Feed this text back as the tool result and continue.
    Feed(String),
    /// Tell the model what was wrong and continue.
    Correct(String),
    Done(String),
    Abort(OrchestratorError),
}

pub(crate) trait LoopHandler {
    fn on_call(&mut self, auth: &Authorized, trace: &mut Vec<TraceEvent>) -> Next;
    fn on_text(&mut self, text: &str, trace: &mut Vec<TraceEvent>) -> Next;
}

pub(crate) struct LoopSpec<'a> {
    pub actor: &'a str,
    pub binding: &'a Binding,
    pub catalog: &'a Catalog,
    pub messages: Vec<ChatMessage>,
}

const MALFORMED_HINT: &str = "Your tool call could not be parsed. Reply with exactly one block:\n```tool_call\n{\"tool\": \"<name>\", \"arguments\": {...}}\n```\nor answer in plain text.";

pub(crate) fn system_prompt(npc: &NpcDef, scope: &Scope<'_>) -> String {
    format!(
        "You are {}, a member of the {} team.\n{}",
        npc.name,
        scope.team().name,
        npc.directive.trim()
    )
}

/// Executor hooks that route `llm` steps and delegation back into the runtime.
pub(crate) struct RuntimeHooks<'r> {
    rt: &'r Runtime,
    scope: Scope<'r>,
    binding: Option<Binding>,
    actor: String,
    pub events: RefCell<Vec<TraceEvent>>,
    pub delegation: RefCell<Option<Result<DelegationOutcome, OrchestratorError>>>,
}

impl ModelHooks for RuntimeHooks<'_> {
    fn llm(&self, prompt: &str) -> Result<String, String> {
        let binding = self
            .binding
            .as_ref()
            .ok_or_else(|| "no model configured for llm steps (set a team default or --model)".to_string())?;
        self.rt.count_model_call();
        complete(&[ChatMessage::user(prompt)], &[], &binding.model, &*binding.provider)
            .map(|r| r.text)
            .map_err(|e| e.to_string())
    }

    fn delegate(&self, request: DelegateRequest) -> Result<String, String> {
        let outcome = self.rt.run_delegation(&request, &self.scope, self.binding.as_ref(), &self.actor);
        let reply = match &outcome {
            Ok(o) => {
                self.events.borrow_mut().extend(o.trace.iter().cloned());
                Ok(o.result.clone())
            }
            Err(e) => Err(e.to_string()),
        };
        *self.delegation.borrow_mut() = Some(outcome);
        reply
    }
}

struct ToolRunner<'r> {
    rt: &'r Runtime,
    scope: Scope<'r>,
    binding: Binding,
    actor: String,
}

impl LoopHandler for ToolRunner<'_> {
    fn on_call(&mut self, auth: &Authorized, trace: &mut Vec<TraceEvent>) -> Next {
        self.rt.count_tool_call();
        let (result, events) = self
            .rt
            .invoke_traced(&auth.jinx, &auth.arguments, &self.scope, Some(&self.binding), &self.actor);
        trace.extend(events);
        match result {
            Ok(r) => {
                let text = r.render();
                trace.push(TraceEvent::new(
                    &self.actor,
                    EventKind::ToolResult {
                        tool: auth.jinx.name.clone(),
                        result: r,
                    },
                ));
                Next::Feed(text)
            }
            Err(e) => {
                let text = format!("error: {e}");
                trace.push(TraceEvent::new(
                    &self.actor,
                    EventKind::ToolError {
                        tool: auth.jinx.name.clone(),
                        error: e,
                    },
                ));
                Next::Feed(text)
            }
        }
    }

    fn on_text(&mut self, text: &str, _trace: &mut Vec<TraceEvent>) -> Next {
        Next::Done(text.to_string())
    }
}

impl Runtime {
    /// Run a Jinx the way both slash commands and authorized tool calls do.
    pub fn invoke(
        &self,
        jinx: &JinxDef,
        args: &BTreeMap<String, Json>,
        scope: &Scope<'_>,
        binding: Option<&Binding>,
    ) -> Result<JinxResult, ExecError> {
        self.invoke_traced(jinx, args, scope, binding, "user").0
    }

    pub(crate) fn invoke_traced(
        &self,
        jinx: &JinxDef,
        args: &BTreeMap<String, Json>,
        scope: &Scope<'_>,
        binding: Option<&Binding>,
        actor: &str,
    ) -> (Result<JinxResult, ExecError>, Vec<TraceEvent>) {
        let hooks = self.hooks(scope, binding, actor);
        let mut ctx = ExecContext::new(&self.workdir, scope.env(), &self.exec);
        let result = Executor::new(&self.exec, scope)
            .with_hooks(&hooks)
            .execute_jinx(jinx, args, &mut ctx);
        (result, hooks.events.into_inner())
    }

    pub(crate) fn hooks<'r>(&'r self, scope: &Scope<'r>, binding: Option<&Binding>, actor: &str) -> RuntimeHooks<'r> {
        RuntimeHooks {
            rt: self,
            scope: scope.clone(),
            binding: binding.cloned(),
            actor: actor.to_string(),
            events: RefCell::new(Vec::new()),
            delegation: RefCell::new(None),
        }
    }

    /// Start a fresh conversation with an NPC.
    pub fn agent_loop(&self, handle: &NpcHandle, user_message: &str) -> Result<LoopOutcome, OrchestratorError> {
        self.continue_conversation(handle, &[], user_message)
    }

    /// Continue a conversation; `history` excludes the system prompt.
    pub fn continue_conversation(
        &self,
        handle: &NpcHandle,
        history: &[ChatMessage],
        user_message: &str,
    ) -> Result<LoopOutcome, OrchestratorError> {
        let (scope, npc) = self.scope_of(handle)?;
        let binding = self.binding_for(npc, &scope)?;
        self.npc_loop(npc, &scope, &binding, history, user_message)
    }

    pub(crate) fn npc_loop(
        &self,
        npc: &NpcDef,
        scope: &Scope<'_>,
        binding: &Binding,
        history: &[ChatMessage],
        user_message: &str,
    ) -> Result<LoopOutcome, OrchestratorError> {
        let catalog = build_catalog(npc, scope)?;
        let mut messages = vec![ChatMessage::system(system_prompt(npc, scope))];
        messages.extend(history.iter().filter(|m| m.role != crate::llm_gateway::Role::System).cloned());
        messages.push(ChatMessage::user(user_message));
        let mut runner = ToolRunner {
            rt: self,
            scope: scope.clone(),
            binding: binding.clone(),
            actor: npc.name.clone(),
        };
        self.run_loop(
            LoopSpec {
                actor: &npc.name,
                binding,
                catalog: &catalog,
                messages,
            },
            &mut runner,
        )
    }

    pub(crate) fn run_loop(&self, spec: LoopSpec<'_>, handler: &mut dyn LoopHandler) -> Result<LoopOutcome, OrchestratorError> {
        let LoopSpec {
            actor,
            binding,
            catalog,
            mut messages,
        } = spec;
        let mut trace = Vec::new();
        let mut last_text = String::new();
        let mut tool_calls = 0;
        let event = |kind| TraceEvent::new(actor, kind);
        let finish = |messages: Vec<ChatMessage>, trace: Vec<TraceEvent>, reply: String, exhausted, tool_calls, turns| LoopOutcome {
            reply,
            exhausted,
            conversation: Conversation {
                npc: actor.to_string(),
                messages,
                turn_budget: self.turn_budget.saturating_sub(turns),
                trace,
            },
            tool_calls,
            model_turns: turns,
        };

        for turn in 1..=self.turn_budget {
            if self.cancelled() {
                return Err(OrchestratorError::Cancelled);
            }
            self.count_model_call();
            let response = complete(&messages, &catalog.tools, &binding.model, &*binding.provider)?;
            trace.push(event(EventKind::ModelTurn {
                turn,
                text: response.text.clone(),
                native_calls: response.native_calls.len(),
            }));
            last_text = response.text.clone();
            let parsed = match response.native_calls.first() {
                Some(payload) => {
                    if response.native_calls.len() > 1 {
                        tracing::warn!("{} native tool calls in one turn; only the first is honored", response.native_calls.len());
                    }
                    parse_tool_call(&payload.to_string(), CallMode::Native)
                }
                None => parse_tool_call(&response.text, CallMode::Prompted),
            };

            let correction = match parsed {
                Err(CallParseError::MalformedCall { reason }) => {
                    trace.push(event(EventKind::MalformedCall { reason: reason.clone() }));
                    messages.push(ChatMessage::assistant(&response.text));
                    format!("{MALFORMED_HINT}\n(parse error: {reason})")
                }
                Ok(None) => match handler.on_text(&response.text, &mut trace) {
                    Next::Done(reply) => {
                        messages.push(ChatMessage::assistant(&response.text));
                        trace.push(event(EventKind::Reply { text: reply.clone() }));
                        return Ok(finish(messages, trace, reply, false, tool_calls, turn));
                    }
                    Next::Abort(e) => return Err(e),
                    Next::Correct(c) | Next::Feed(c) => {
                        messages.push(ChatMessage::assistant(&response.text));
                        c
                    }
                },
                Ok(Some(call)) => match enforce(&call, catalog) {
                    Err(error) => {
                        self.count_rejection();
                        let text = format!("{error}. {}", catalog.listing());
                        trace.push(event(EventKind::ToolCallRejected {
                            tool: call.tool.clone(),
                            error,
                        }));
                        messages.push(ChatMessage::assistant(&response.text));
                        text
                    }
                    Ok(auth) => {
                        trace.push(event(EventKind::ToolCallAuthorized {
                            tool: auth.jinx.name.clone(),
                            arguments: Json::Object(auth.arguments.clone().into_iter().collect()),
                        }));
                        tool_calls += 1;
                        messages.push(ChatMessage::assistant_call(&response.text, call.clone()));
                        match handler.on_call(&auth, &mut trace) {
                            Next::Feed(result) => {
                                messages.push(ChatMessage::tool(call, result));
                                continue;
                            }
                            Next::Done(reply) => {
                                messages.push(ChatMessage::tool(call, reply.clone()));
                                trace.push(event(EventKind::Reply { text: reply.clone() }));
                                return Ok(finish(messages, trace, reply, false, tool_calls, turn));
                            }
                            Next::Correct(c) => {
                                trace.push(event(EventKind::CorrectiveMessage { content: c.clone() }));
                                messages.push(ChatMessage::tool(call, c));
                                continue;
                            }
                            Next::Abort(e) => return Err(e),
                        }
                    }
                },
            };
            trace.push(event(EventKind::CorrectiveMessage {
                content: correction.clone(),
            }));
            messages.push(ChatMessage::user(correction));
        }

        trace.push(event(EventKind::BudgetExhausted { turns: self.turn_budget }));
        Ok(finish(messages, trace, last_text, true, tool_calls, self.turn_budget))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cat_model::bundled_team;
    use crate::llm_gateway::{ModelResponse, ProviderRegistry, ScriptedProvider};
    use crate::tool_schema::{render_call_block, ToolCall};
    use serde_json::json;
    use std::sync::Arc;

    fn runtime(script: Vec<ModelResponse>) -> (Runtime, Arc<ScriptedProvider>) {
        let provider = Arc::new(ScriptedProvider::new(script));
        let rt = Runtime::new(
            Arc::new(bundled_team()),
            ProviderRegistry::single(provider.clone()),
            std::env::temp_dir(),
        );
        (rt, provider)
    }

    fn call(tool: &str, args: Json) -> ModelResponse {
        let args: BTreeMap<String, Json> = serde_json::from_value(args).unwrap();
        ModelResponse::text(render_call_block(&ToolCall::new(tool, args)))
    }

    #[test]
    fn plain_reply_verbatim() {
        let (rt, _) = runtime(vec![ModelResponse::text("just a reply")]);
        let h = rt.find_npc("orchestrator").unwrap();
        let out = rt.agent_loop(&h, "hi").unwrap();
        assert_eq!(out.reply, "just a reply");
        assert_eq!(out.tool_calls, 0);
        assert!(!out.exhausted);
    }

    #[test]
    fn one_tool_call_then_reply() {
        let (rt, provider) = runtime(vec![call("sh", json!({"cmd": "printf done"})), ModelResponse::text("finished")]);
        let h = rt.find_npc("orchestrator").unwrap();
        let out = rt.agent_loop(&h, "do it").unwrap();
        assert_eq!(out.reply, "finished");
        assert_eq!(out.tool_calls, 1);
        let results: Vec<_> = out
            .trace()
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::ToolResult { result, .. } => Some(result.final_value.display()),
                _ => None,
            })
            .collect();
        assert_eq!(results, vec!["done"]);
        // The second request carries the tool result back to the model.
        let second = &provider.requests()[1];
        assert_eq!(second.messages.last().unwrap().tool_result.as_deref(), Some("done"));
    }

    #[test]
    fn forbidden_tool_gets_corrective_message() {
        let (rt, provider) = runtime(vec![call("forbidden_tool", json!({})), ModelResponse::text("ok")]);
        let h = rt.find_npc("orchestrator").unwrap();
        let out = rt.agent_loop(&h, "x").unwrap();
        assert_eq!(out.reply, "ok");
        assert_eq!(out.tool_calls, 0);
        let names: Vec<_> = out.trace().iter().map(|e| e.name()).collect();
        assert_eq!(names, ["model_turn", "tool_call_rejected", "corrective_message", "model_turn", "reply"]);
        let corrective = provider.requests()[1].messages.last().unwrap().content.clone();
        assert!(corrective.contains("forbidden_tool") && corrective.contains("web_search"));
    }

    #[test]
    fn malformed_call_is_corrected() {
        let (rt, _) = runtime(vec![
            ModelResponse::text("```tool_call\n{\"tool\": \"sh\", \"arguments\": {\"cmd\": \n```"),
            ModelResponse::text("sorry"),
        ]);
        let h = rt.find_npc("orchestrator").unwrap();
        let out = rt.agent_loop(&h, "x").unwrap();
        assert_eq!(out.reply, "sorry");
        assert!(out.trace().iter().any(|e| e.name() == "malformed_call"));
    }

    #[test]
    fn turn_budget_bounds_adversarial_loop() {
        let script = (0..50).map(|_| call("sh", json!({"cmd": "true"}))).collect();
        let (rt, provider) = runtime(script);
        let rt = rt.with_turn_budget(4);
        let h = rt.find_npc("orchestrator").unwrap();
        let out = rt.agent_loop(&h, "x").unwrap();
        assert!(out.exhausted);
        assert_eq!(out.model_turns, 4);
        assert_eq!(provider.served(), 4);
        assert_eq!(rt.model_calls(), 4);
    }

    #[test]
    fn provider_errors_propagate() {
        let (rt, _) = runtime(vec![]);
        let h = rt.find_npc("orchestrator").unwrap();
        assert!(matches!(rt.agent_loop(&h, "x"), Err(OrchestratorError::Gateway(_))));
    }

    #[test]
    fn native_mode_loop() {
        let provider = Arc::new(
            ScriptedProvider::new(vec![
                ModelResponse::native(json!({"id": "c1", "type": "function", "function": {"name": "sh", "arguments": "{\"cmd\": \"printf n\"}"}})),
                ModelResponse::text("native done"),
            ])
            .with_native_tools(true),
        );
        let rt = Runtime::new(Arc::new(bundled_team()), ProviderRegistry::single(provider.clone()), std::env::temp_dir());
        let h = rt.find_npc("orchestrator").unwrap();
        let out = rt.agent_loop(&h, "x").unwrap();
        assert_eq!(out.reply, "native done");
        assert_eq!(out.tool_calls, 1);
        assert_eq!(provider.requests()[0].tools.len(), 8);
    }
}
