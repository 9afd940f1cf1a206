use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::{json, Value as Json};

use super::{Binding, EventKind, OrchestratorError, Runtime, TraceEvent};
use crate::cat_model::{NpcDef, Scope};
use crate::jinx_engine::{render_template, DelegateRequest, ExecContext, Executor, Value};
use crate::llm_gateway::{complete, ChatMessage};

/// Longest feedback excerpt passed on in `summarized` mode.
const SUMMARY_CHARS: usize = 300;
const SUMMARY_LINES: usize = 3;

const FALLBACK_CHECKER: &str = "Task: {{ task }}\nCompletion criteria: {{ completion_criteria }}\nResult of iteration {{ iteration }}:\n{{ output }}\nAnswer SATISFIED or UNSATISFIED on the first line, then explain what is missing.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    Verbatim,
    Summarized,
}

impl FeedbackMode {
    pub fn parse(s: &str) -> Option<FeedbackMode> {
        match s.trim() {
            "verbatim" => Some(FeedbackMode::Verbatim),
            "summarized" => Some(FeedbackMode::Summarized),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeedbackMode::Verbatim => "verbatim",
            FeedbackMode::Summarized => "summarized",
        }
    }

    fn apply(self, feedback: &str) -> String {
        match self {
            FeedbackMode::Verbatim => feedback.to_string(),
            FeedbackMode::Summarized => {
                let lines: Vec<&str> = feedback.lines().map(str::trim).filter(|l| !l.is_empty()).take(SUMMARY_LINES).collect();
                let joined = lines.join(" ");
                match joined.char_indices().nth(SUMMARY_CHARS) {
                    Some((cut, _)) => format!("{}...", &joined[..cut]),
                    None => joined,
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelegationSpec {
    pub target: String,
    pub task: String,
    pub completion_criteria: String,
    pub max_iterations: usize,
    pub feedback_mode: FeedbackMode,
}

#[derive(Debug, Clone, Serialize)]
pub struct DelegationOutcome {
    pub result: String,
    pub iterations_used: usize,
    pub satisfied: bool,
    pub trace: Vec<TraceEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Satisfied,
    Unsatisfied { feedback: String },
}

/// Read a checker reply: the first non-empty line decides, the rest is feedback.
pub fn parse_verdict(reply: &str) -> Verdict {
    let mut lines = reply.lines().skip_while(|l| l.trim().is_empty());
    let first = lines.next().unwrap_or("");
    let head: String = first
        .trim()
        .trim_start_matches(|c: char| !c.is_alphabetic())
        .to_uppercase();
    let rest = lines.collect::<Vec<_>>().join("\n").trim().to_string();
    if head.starts_with("SATISFIED") {
        return Verdict::Satisfied;
    }
    let feedback = if head.starts_with("UNSATISFIED") || head.starts_with("NOT SATISFIED") {
        if rest.is_empty() {
            first.trim().to_string()
        } else {
            rest
        }
    } else {
        reply.trim().to_string()
    };
    Verdict::Unsatisfied { feedback }
}

impl Runtime {
    /// Run the `delegate` Jinx visible from `scope_path` with the given spec.
    pub fn delegate(&self, spec: &DelegationSpec, scope_path: &[String]) -> Result<DelegationOutcome, OrchestratorError> {
        if spec.max_iterations == 0 {
            return Err(OrchestratorError::InvalidDelegation {
                message: "max_iterations must be at least 1".into(),
            });
        }
        let scope = self.team.scope_at(scope_path).ok_or_else(|| OrchestratorError::UnknownTarget {
            target: scope_path.join("/"),
        })?;
        let jinx = crate::cat_model::resolve_jinx("delegate", &scope)?;
        let args: BTreeMap<String, Json> = [
            ("target", json!(spec.target)),
            ("task", json!(spec.task)),
            ("completion_criteria", json!(spec.completion_criteria)),
            ("max_iterations", json!(spec.max_iterations)),
            ("feedback_mode", json!(spec.feedback_mode.as_str())),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let binding = self.scope_binding(&scope);
        let hooks = self.hooks(&scope, binding.as_ref(), &scope.team().context.orchestrator);
        let mut ctx = ExecContext::new(&self.workdir, scope.env(), &self.exec);
        let result = Executor::new(&self.exec, &scope)
            .with_hooks(&hooks)
            .execute_jinx(&jinx, &args, &mut ctx)?;
        match hooks.delegation.into_inner() {
            Some(outcome) => outcome,
            None => Err(OrchestratorError::InvalidDelegation {
                message: format!("`delegate` jinx finished without delegating: {}", result.render()),
            }),
        }
    }

    fn delegation_target<'s>(&self, scope: &Scope<'s>, target: &str) -> Result<(Scope<'s>, &'s NpcDef), OrchestratorError> {
        let team = scope.team();
        if let Some(npc) = team.npcs.get(target) {
            return Ok((scope.clone(), npc));
        }
        if let Some(sub) = scope.enter(target) {
            let orch = sub.team().orchestrator().ok_or_else(|| OrchestratorError::NoOrchestrator { team: target.into() })?;
            return Ok((sub, orch));
        }
        Err(OrchestratorError::UnknownTarget { target: target.into() })
    }

    fn checker_binding(&self, scope: &Scope<'_>, caller: Option<&Binding>) -> Result<Binding, OrchestratorError> {
        let model = self
            .model_override
            .as_deref()
            .or(scope.default_model())
            .map(str::to_string)
            .or_else(|| caller.map(|b| b.model.clone()));
        let provider = self.provider_override.as_deref().or(scope.default_provider());
        match (model, provider, caller) {
            (Some(m), Some(p), _) => self.binding_with(&m, p),
            (Some(m), None, Some(c)) => Ok(Binding {
                model: m,
                provider: c.provider.clone(),
            }),
            _ => Err(OrchestratorError::NoModel {
                npc: "delegation checker".into(),
            }),
        }
    }

    pub(crate) fn run_delegation(
        &self,
        request: &DelegateRequest,
        scope: &Scope<'_>,
        caller: Option<&Binding>,
        actor: &str,
    ) -> Result<DelegationOutcome, OrchestratorError> {
        let mode = FeedbackMode::parse(&request.feedback_mode).ok_or_else(|| OrchestratorError::InvalidDelegation {
            message: format!("feedback_mode must be verbatim or summarized, got `{}`", request.feedback_mode),
        })?;
        if request.max_iterations == 0 {
            return Err(OrchestratorError::InvalidDelegation {
                message: "max_iterations must be at least 1".into(),
            });
        }
        let (target_scope, target) = self.delegation_target(scope, &request.target)?;
        let target_binding = self.binding_for(target, &target_scope)?;
        let checker = self.checker_binding(scope, caller)?;
        let template = if request.checker_template.trim().is_empty() {
            FALLBACK_CHECKER
        } else {
            request.checker_template.as_str()
        };

        let mut trace = Vec::new();
        let mut message = request.task.clone();
        let mut last = String::new();
        for iteration in 1..=request.max_iterations {
            if self.cancelled() {
                return Err(OrchestratorError::Cancelled);
            }
            let outcome = self.npc_loop(target, &target_scope, &target_binding, &[], &message)?;
            trace.extend(outcome.conversation.trace);
            last = outcome.reply;

            let mut bindings = request.bindings.clone();
            bindings.insert("output".into(), Value::text(last.clone()));
            bindings.insert("iteration".into(), Value::Data(json!(iteration)));
            bindings.entry("task".into()).or_insert_with(|| Value::text(request.task.clone()));
            bindings
                .entry("completion_criteria".into())
                .or_insert_with(|| Value::text(request.completion_criteria.clone()));
            let prompt = render_template(template, &bindings).map_err(|e| OrchestratorError::InvalidDelegation {
                message: format!("checker prompt: {e}"),
            })?;
            self.count_model_call();
            let reply = complete(&[ChatMessage::user(prompt)], &[], &checker.model, &*checker.provider)?.text;
            let verdict = parse_verdict(&reply);
            let satisfied = verdict == Verdict::Satisfied;
            trace.push(TraceEvent::new(
                actor,
                EventKind::Delegation {
                    target: request.target.clone(),
                    iteration,
                    satisfied,
                },
            ));
            match verdict {
                Verdict::Satisfied => {
                    return Ok(DelegationOutcome {
                        result: last,
                        iterations_used: iteration,
                        satisfied: true,
                        trace,
                    })
                }
                Verdict::Unsatisfied { feedback } => {
                    message = format!(
                        "{}\n\nYour previous answer:\n{last}\n\nReviewer feedback:\n{}\n\nRevise your answer.",
                        request.task,
                        mode.apply(&feedback)
                    );
                }
            }
        }
        Ok(DelegationOutcome {
            result: last,
            iterations_used: request.max_iterations,
            satisfied: false,
            trace,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdicts() {
        assert_eq!(parse_verdict("SATISFIED"), Verdict::Satisfied);
        assert_eq!(parse_verdict("\n**Satisfied** looks good"), Verdict::Satisfied);
        assert_eq!(
            parse_verdict("UNSATISFIED\nmissing tests"),
            Verdict::Unsatisfied {
                feedback: "missing tests".into()
            }
        );
        assert!(matches!(parse_verdict("maybe?"), Verdict::Unsatisfied { .. }));
        assert!(matches!(parse_verdict("Not satisfied"), Verdict::Unsatisfied { .. }));
    }

    #[test]
    fn summarized_feedback_is_short() {
        let long = "a ".repeat(1000);
        let s = FeedbackMode::Summarized.apply(&format!("x\n\ny\nz\nw\n{long}"));
        assert_eq!(s, "x y z");
        let s = FeedbackMode::Summarized.apply(&long);
        assert!(s.len() <= SUMMARY_CHARS + 3);
        assert_eq!(FeedbackMode::Verbatim.apply("a\nb"), "a\nb");
    }
}
