use std::collections::HashMap;
use std::path::PathBuf;
use std::process::Command;
use std::sync::atomic::AtomicBool;
use std::sync::{Arc, Mutex};

use super::BenchTask;
use crate::cat_model::{NpcHandle, Team};
use crate::jinx_engine::ExecConfig;
use crate::llm_gateway::{ChatMessage, ProviderRegistry};
use crate::process;
use crate::team_orchestrator::{LoopOutcome, OrchestratorError, Runtime};

/// Everything an agent gets for one attempt.
#[derive(Debug, Clone)]
pub struct AttemptRequest {
    pub task: BenchTask,
    /// The task instruction, with retry feedback appended after the first attempt.
    pub instruction: String,
    pub workdir: PathBuf,
    /// 1-based.
    pub attempt_index: usize,
    pub feedback: Option<String>,
    /// Set by the harness when the attempt's time is up.
    pub cancel: Arc<AtomicBool>,
    /// Earlier conversation for this task; empty with fresh context.
    pub history: Vec<ChatMessage>,
}

#[derive(Debug, Clone, Default)]
pub struct AgentTranscript {
    /// Final agent output, shown to the model again in retry feedback.
    pub text: String,
    pub tool_calls: usize,
    pub rejected_calls: usize,
    pub model_turns: usize,
    /// The agent itself failed (provider error, crash); verification still runs.
    pub error: Option<String>,
    /// Conversation to carry into the next attempt (excluding the system prompt).
    pub messages: Vec<ChatMessage>,
    /// `native` or `prompted`, when the agent knows.
    pub call_mode: Option<String>,
}

pub trait Agent: Send + Sync {
    fn attempt(&self, request: &AttemptRequest) -> AgentTranscript;
}

impl<F> Agent for F
where
    F: Fn(&AttemptRequest) -> AgentTranscript + Send + Sync,
{
    fn attempt(&self, request: &AttemptRequest) -> AgentTranscript {
        self(request)
    }
}

/// Runs an external program with the instruction as its last argument,
/// inside the task workdir.
#[derive(Debug, Clone)]
pub struct CommandAgent {
    pub program: String,
    pub args: Vec<String>,
}

impl CommandAgent {
    /// Split a shell-style command line into program and arguments.
    pub fn parse(command_line: &str) -> Option<CommandAgent> {
        let mut words = shlex::split(command_line)?.into_iter();
        let program = words.next()?;
        Some(CommandAgent {
            program,
            args: words.collect(),
        })
    }
}

impl Agent for CommandAgent {
    fn attempt(&self, request: &AttemptRequest) -> AgentTranscript {
        let mut cmd = Command::new(&self.program);
        cmd.args(&self.args).arg(&request.instruction).current_dir(&request.workdir);
        match process::run(cmd, None, Some(&request.cancel)) {
            Ok(out) => {
                let error = (!out.success()).then(|| format!("agent command ended with {:?}", out.termination));
                let mut text = out.stdout;
                if !out.stderr.trim().is_empty() {
                    text.push_str(&out.stderr);
                }
                AgentTranscript {
                    text,
                    error,
                    ..AgentTranscript::default()
                }
            }
            Err(e) => AgentTranscript {
                error: Some(format!("cannot start `{}`: {e}", self.program)),
                ..AgentTranscript::default()
            },
        }
    }
}

/// Builds the providers an NPC agent talks to for a given task.
pub type ProviderFactory = Arc<dyn Fn(&BenchTask) -> ProviderRegistry + Send + Sync>;

/// Drives a team through the runtime. With no NPC named, each task is routed
/// by the orchestrator on its first attempt and later attempts stay with the
/// NPC it picked.
pub struct NpcAgent {
    pub team: Arc<Team>,
    pub npc: Option<String>,
    pub providers: ProviderFactory,
    pub model_override: Option<String>,
    pub provider_override: Option<String>,
    pub exec: ExecConfig,
    pub turn_budget: Option<usize>,
    registries: Mutex<HashMap<String, ProviderRegistry>>,
    routed: Mutex<HashMap<String, NpcHandle>>,
}

impl NpcAgent {
    pub fn new(team: Arc<Team>, providers: ProviderFactory) -> Self {
        NpcAgent {
            team,
            npc: None,
            providers,
            model_override: None,
            provider_override: None,
            exec: ExecConfig::default(),
            turn_budget: None,
            registries: Mutex::new(HashMap::new()),
            routed: Mutex::new(HashMap::new()),
        }
    }

    /// Same providers for every task.
    pub fn with_registry(team: Arc<Team>, registry: ProviderRegistry) -> Self {
        NpcAgent::new(team, Arc::new(move |_| registry.clone()))
    }

    pub fn with_npc(mut self, npc: impl Into<String>) -> Self {
        self.npc = Some(npc.into());
        self
    }

    pub fn with_overrides(mut self, model: Option<String>, provider: Option<String>) -> Self {
        self.model_override = model;
        self.provider_override = provider;
        self
    }

    pub fn with_exec(mut self, exec: ExecConfig) -> Self {
        self.exec = exec;
        self
    }

    pub fn with_turn_budget(mut self, budget: usize) -> Self {
        self.turn_budget = Some(budget);
        self
    }

    /// One registry per task, so scripted providers keep their position across attempts.
    fn registry(&self, task: &BenchTask) -> ProviderRegistry {
        let mut cache = self.registries.lock().unwrap_or_else(|e| e.into_inner());
        cache
            .entry(task.id.clone())
            .or_insert_with(|| (self.providers)(task))
            .clone()
    }

    fn runtime(&self, request: &AttemptRequest) -> Runtime {
        let mut exec = self.exec.clone();
        exec.cancel = Some(request.cancel.clone());
        let mut rt = Runtime::new(self.team.clone(), self.registry(&request.task), &request.workdir)
            .with_exec(exec)
            .with_overrides(self.model_override.clone(), self.provider_override.clone());
        if let Some(b) = self.turn_budget {
            rt = rt.with_turn_budget(b);
        }
        rt
    }

    fn call_mode(rt: &Runtime, handle: &NpcHandle) -> Option<String> {
        let (scope, npc) = rt.scope_of(handle).ok()?;
        let binding = rt.binding_for(npc, &scope).ok()?;
        Some(if binding.provider.supports_native_tools() { "native" } else { "prompted" }.to_string())
    }

    fn run(&self, rt: &Runtime, request: &AttemptRequest) -> (Option<NpcHandle>, Result<LoopOutcome, OrchestratorError>) {
        let named = match &self.npc {
            Some(name) => match rt.find_npc(name) {
                Ok(h) => Some(h),
                Err(e) => return (None, Err(e)),
            },
            None => self.routed.lock().unwrap_or_else(|e| e.into_inner()).get(&request.task.id).cloned(),
        };
        match named {
            Some(handle) => {
                let out = rt.continue_conversation(&handle, &request.history, &request.instruction);
                (Some(handle), out)
            }
            None => match rt.respond(&request.instruction) {
                Ok((handle, out)) => {
                    self.routed
                        .lock()
                        .unwrap_or_else(|e| e.into_inner())
                        .insert(request.task.id.clone(), handle.clone());
                    (Some(handle), Ok(out))
                }
                Err(e) => (None, Err(e)),
            },
        }
    }
}

impl Agent for NpcAgent {
    fn attempt(&self, request: &AttemptRequest) -> AgentTranscript {
        let rt = self.runtime(request);
        let (handle, result) = self.run(&rt, request);
        let call_mode = handle.as_ref().and_then(|h| NpcAgent::call_mode(&rt, h));
        let mut transcript = AgentTranscript {
            tool_calls: rt.tool_calls(),
            rejected_calls: rt.rejected_calls(),
            model_turns: rt.model_calls(),
            call_mode,
            ..AgentTranscript::default()
        };
        match result {
            Ok(out) => {
                transcript.text = out.reply;
                transcript.messages = out.conversation.messages;
            }
            Err(e) => {
                transcript.error = Some(e.to_string());
                let mut messages = request.history.clone();
                messages.push(ChatMessage::user(&request.instruction));
                transcript.messages = messages;
            }
        }
        transcript
    }
}
