use std::collections::BTreeMap;
use std::io::{self, Write};
use std::process::Command;
use std::sync::atomic::AtomicBool;
use std::time::Instant;

use serde_json::Value as Json;

use super::graph::{expansion_graph, resolve_engine, BuiltinEngine, EngineRef, JinxResolver};
use super::template::{evaluate_single, render_template};
use super::{
    Bindings, ExecConfig, ExecContext, ExecError, JinxResult, Status, StepError, StepFailure, StepOutput, Value,
};
use crate::cat_model::{JinxDef, StepDef};
use crate::process::{self, ProcessOutput, Termination};

const STDERR_TAIL: usize = 2000;

/// Parameters for the `delegate` engine, taken from the step's rendered args.
#[derive(Debug, Clone)]
pub struct DelegateRequest {
    pub target: String,
    pub task: String,
    pub completion_criteria: String,
    pub max_iterations: usize,
    pub feedback_mode: String,
    /// Unrendered checker prompt; rendered per iteration with `output` and `iteration` added.
    pub checker_template: String,
    pub bindings: Bindings,
}

/// Model-backed engines, supplied by the agent runtime.
pub trait ModelHooks {
    fn llm(&self, prompt: &str) -> Result<String, String>;
    fn delegate(&self, request: DelegateRequest) -> Result<String, String>;
}

/// Instrumentation points; all default to no-ops.
pub trait ExecObserver {
    fn jinx_started(&self, _name: &str, _depth: usize) {}
    fn step_rendered(&self, _jinx: &str, _step: &str, _visible: &[String]) {}
    fn step_finished(&self, _jinx: &str, _output: &StepOutput) {}
}

pub struct Executor<'a> {
    config: &'a ExecConfig,
    resolver: &'a dyn JinxResolver,
    hooks: Option<&'a dyn ModelHooks>,
    observer: Option<&'a dyn ExecObserver>,
}

fn tail(s: &str, max: usize) -> String {
    let s = s.trim_end();
    if s.len() <= max {
        return s.to_string();
    }
    let mut start = s.len() - max;
    while !s.is_char_boundary(start) {
        start += 1;
    }
    s[start..].to_string()
}

fn strip_trailing_newlines(s: &str) -> &str {
    s.trim_end_matches(['\n', '\r'])
}

/// What a single engine dispatch produced before it is wrapped into a StepOutput.
struct Dispatch {
    value: Value,
    stdout: String,
    stderr: String,
}

impl<'a> Executor<'a> {
    pub fn new(config: &'a ExecConfig, resolver: &'a dyn JinxResolver) -> Self {
        Executor {
            config,
            resolver,
            hooks: None,
            observer: None,
        }
    }

    pub fn with_hooks(mut self, hooks: &'a dyn ModelHooks) -> Self {
        self.hooks = Some(hooks);
        self
    }

    pub fn with_observer(mut self, observer: &'a dyn ExecObserver) -> Self {
        self.observer = Some(observer);
        self
    }

    /// Run a Jinx to completion or first failed step. Precondition violations
    /// (inputs, depth, budget, reference graph) are `Err`; a failed step yields
    /// `Ok` with `status = Failed` and the failure recorded.
    pub fn execute_jinx(
        &self,
        jinx: &JinxDef,
        args: &BTreeMap<String, Json>,
        ctx: &mut ExecContext,
    ) -> Result<JinxResult, ExecError> {
        if ctx.depth == 0 {
            expansion_graph(jinx, self.resolver)?;
        }
        self.run_jinx(jinx, args, ctx)
    }

    fn bind_inputs(&self, jinx: &JinxDef, args: &BTreeMap<String, Json>, ctx: &mut ExecContext) -> Result<(), ExecError> {
        if let Some(unknown) = args.keys().find(|k| jinx.input(k).is_none()) {
            return Err(ExecError::UnknownInput {
                jinx: jinx.name.clone(),
                input: unknown.clone(),
            });
        }
        for input in &jinx.inputs {
            let value = match args.get(&input.name) {
                Some(v) if input.type_tag.accepts(v) => v.clone(),
                Some(v) => {
                    return Err(ExecError::TypeMismatch {
                        jinx: jinx.name.clone(),
                        input: input.name.clone(),
                        expected: input.type_tag.to_string(),
                        value: v.to_string(),
                    })
                }
                None => match (&input.default, input.required) {
                    (Some(d), false) => d.clone(),
                    _ => {
                        return Err(ExecError::MissingInput {
                            jinx: jinx.name.clone(),
                            input: input.name.clone(),
                        })
                    }
                },
            };
            if ctx.bindings.contains_key(&input.name) {
                return Err(ExecError::BindingOverwrite {
                    name: input.name.clone(),
                });
            }
            ctx.bindings.insert(input.name.clone(), Value::Data(value));
        }
        Ok(())
    }

    fn run_jinx(&self, jinx: &JinxDef, args: &BTreeMap<String, Json>, ctx: &mut ExecContext) -> Result<JinxResult, ExecError> {
        if ctx.depth > self.config.max_depth {
            return Err(ExecError::DepthExceeded {
                limit: self.config.max_depth,
            });
        }
        if let Some(clash) = jinx.steps.iter().find(|s| jinx.input(&s.name).is_some()) {
            return Err(ExecError::BindingOverwrite {
                name: clash.name.clone(),
            });
        }
        self.bind_inputs(jinx, args, ctx)?;
        if let Some(obs) = self.observer {
            obs.jinx_started(&jinx.name, ctx.depth);
        }

        let mut outputs = Vec::with_capacity(jinx.steps.len());
        let mut failure = None;
        for step in &jinx.steps {
            if ctx.budget == 0 {
                return Err(ExecError::BudgetExhausted {
                    limit: self.config.step_budget,
                });
            }
            ctx.budget -= 1;
            let start = Instant::now();
            let result = self.dispatch(jinx, step, ctx);
            let duration = start.elapsed().as_secs_f64();
            let output = match result {
                Ok(d) => StepOutput {
                    step_name: step.name.clone(),
                    value: d.value,
                    stdout: d.stdout,
                    stderr: d.stderr,
                    status: Status::Ok,
                    duration,
                    error: None,
                },
                Err((StepError::Nested(inner), _)) if matches!(*inner, ExecError::DepthExceeded { .. } | ExecError::BudgetExhausted { .. }) => {
                    return Err(*inner);
                }
                Err((error, partial)) => {
                    let (stdout, stderr) = partial.unwrap_or_default();
                    failure = Some(StepFailure {
                        step: step.name.clone(),
                        error: error.clone(),
                    });
                    StepOutput {
                        step_name: step.name.clone(),
                        value: Value::text(""),
                        stdout,
                        stderr,
                        status: Status::Failed,
                        duration,
                        error: Some(error.to_string()),
                    }
                }
            };
            if let Some(obs) = self.observer {
                obs.step_finished(&jinx.name, &output);
            }
            let failed = output.status == Status::Failed;
            if !failed {
                if ctx.bindings.contains_key(&step.name) {
                    return Err(ExecError::BindingOverwrite {
                        name: step.name.clone(),
                    });
                }
                ctx.bindings.insert(step.name.clone(), output.value.clone());
            }
            outputs.push(output);
            if failed {
                break;
            }
        }

        let status = if failure.is_some() { Status::Failed } else { Status::Ok };
        let final_value = match status {
            Status::Ok => outputs.last().map(|o| o.value.clone()).unwrap_or_else(|| Value::text("")),
            Status::Failed => Value::text(""),
        };
        Ok(JinxResult {
            jinx_name: jinx.name.clone(),
            outputs,
            final_value,
            status,
            failure,
        })
    }

    /// Execute one step against the current bindings.
    pub fn execute_step(&self, owner: &JinxDef, step: &StepDef, ctx: &mut ExecContext) -> Result<StepOutput, StepError> {
        let start = Instant::now();
        let d = self.dispatch(owner, step, ctx).map_err(|(e, _)| e)?;
        Ok(StepOutput {
            step_name: step.name.clone(),
            value: d.value,
            stdout: d.stdout,
            stderr: d.stderr,
            status: Status::Ok,
            duration: start.elapsed().as_secs_f64(),
            error: None,
        })
    }

    fn notify_render(&self, owner: &JinxDef, step: &StepDef, ctx: &ExecContext) {
        if let Some(obs) = self.observer {
            let visible: Vec<String> = ctx.bindings.keys().cloned().collect();
            obs.step_rendered(&owner.name, &step.name, &visible);
        }
    }

    fn dispatch(
        &self,
        owner: &JinxDef,
        step: &StepDef,
        ctx: &mut ExecContext,
    ) -> Result<Dispatch, (StepError, Option<(String, String)>)> {
        let engine = resolve_engine(owner, step, self.resolver).ok_or_else(|| {
            (
                StepError::UnknownEngine {
                    engine: step.engine.clone(),
                },
                None,
            )
        })?;
        match engine {
            EngineRef::Jinx(target) => self.run_nested(step, &target, ctx).map_err(|e| (e, None)),
            EngineRef::Builtin(BuiltinEngine::Delegate) => {
                self.notify_render(owner, step, ctx);
                self.run_delegate(step, ctx).map_err(|e| (e, None))
            }
            EngineRef::Builtin(b) => {
                self.notify_render(owner, step, ctx);
                let body = render_template(&step.body, &ctx.bindings).map_err(|e| (e.into(), None))?;
                match b {
                    BuiltinEngine::Shell => self.run_shell("sh", &body, ctx, true),
                    BuiltinEngine::Bash => self.run_shell("bash", &body, ctx, true),
                    BuiltinEngine::Python => self.run_python(&body, ctx),
                    BuiltinEngine::Llm => self.run_llm(&body).map_err(|e| (e, None)),
                    BuiltinEngine::Static => self.run_static(body, ctx).map_err(|e| (e, None)),
                    BuiltinEngine::Delegate => unreachable!("handled above"),
                }
            }
        }
    }

    fn render_arg(&self, template: &str, bindings: &Bindings) -> Result<Json, StepError> {
        match evaluate_single(template, bindings) {
            Some(v) => Ok(v?.to_json()),
            None => Ok(Json::String(render_template(template, bindings)?)),
        }
    }

    fn run_nested(&self, step: &StepDef, target: &JinxDef, ctx: &mut ExecContext) -> Result<Dispatch, StepError> {
        if let Some(obs) = self.observer {
            let visible: Vec<String> = ctx.bindings.keys().cloned().collect();
            obs.step_rendered(&target.name, &step.name, &visible);
        }
        let mut args = BTreeMap::new();
        match &step.args {
            Some(templates) => {
                for (k, t) in templates {
                    args.insert(k.clone(), self.render_arg(t, &ctx.bindings)?);
                }
            }
            None if !step.body.trim().is_empty() => {
                if let Some(primary) = target.primary_input() {
                    args.insert(primary.name.clone(), self.render_arg(&step.body, &ctx.bindings)?);
                }
            }
            None => {}
        }
        for (k, v) in args.iter_mut() {
            if let Some(decl) = target.input(k) {
                if let Some(c) = decl.type_tag.coerce(v) {
                    *v = c;
                } else if decl.type_tag == crate::cat_model::TypeTag::String && !v.is_string() {
                    *v = Json::String(Value::Data(v.clone()).display());
                }
            }
        }
        let mut child = ExecContext {
            bindings: Bindings::new(),
            workdir: ctx.workdir.clone(),
            env: ctx.env.clone(),
            depth: ctx.depth + 1,
            budget: ctx.budget,
        };
        let result = self.run_jinx(target, &args, &mut child);
        ctx.budget = child.budget;
        let result = result.map_err(|e| StepError::Nested(Box::new(e)))?;
        match result.failure {
            None => Ok(Dispatch {
                value: result.final_value,
                stdout: String::new(),
                stderr: String::new(),
            }),
            Some(f) => Err(StepError::Nested(Box::new(ExecError::StepFailed {
                jinx: result.jinx_name,
                step: f.step,
                source: f.error,
            }))),
        }
    }

    fn cancel_flag(&self) -> Option<&AtomicBool> {
        self.config.cancel.as_deref()
    }

    fn finish_process(&self, out: ProcessOutput) -> Result<Dispatch, (StepError, Option<(String, String)>)> {
        let partial = Some((out.stdout.clone(), out.stderr.clone()));
        match out.termination {
            Termination::Exited(0) => Ok(Dispatch {
                value: Value::from_output(strip_trailing_newlines(&out.stdout)),
                stdout: out.stdout,
                stderr: out.stderr,
            }),
            Termination::Exited(code) => Err((
                StepError::NonzeroExit {
                    code,
                    stderr: tail(&out.stderr, STDERR_TAIL),
                },
                partial,
            )),
            Termination::Signaled => Err((
                StepError::Signaled {
                    stderr: tail(&out.stderr, STDERR_TAIL),
                },
                partial,
            )),
            Termination::TimedOut => Err((
                StepError::Timeout {
                    seconds: self.config.step_timeout.map(|d| d.as_secs_f64()).unwrap_or(0.0),
                },
                partial,
            )),
            Termination::Cancelled => Err((StepError::Cancelled, partial)),
        }
    }

    fn prepare(&self, cmd: &mut Command, ctx: &ExecContext) -> Result<(), StepError> {
        if !ctx.workdir.is_dir() {
            return Err(StepError::Io {
                message: format!("working directory {} does not exist", ctx.workdir.display()),
            });
        }
        cmd.current_dir(&ctx.workdir).envs(&ctx.env);
        Ok(())
    }

    fn run_shell(
        &self,
        program: &str,
        body: &str,
        ctx: &ExecContext,
        fallback_to_sh: bool,
    ) -> Result<Dispatch, (StepError, Option<(String, String)>)> {
        let mut cmd = Command::new(program);
        cmd.arg("-c").arg(body);
        self.prepare(&mut cmd, ctx).map_err(|e| (e, None))?;
        match process::run(cmd, self.config.step_timeout, self.cancel_flag()) {
            Ok(out) => self.finish_process(out),
            Err(e) if e.kind() == io::ErrorKind::NotFound && fallback_to_sh && program != "sh" => {
                self.run_shell("sh", body, ctx, false)
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err((
                StepError::InterpreterNotFound {
                    program: program.into(),
                },
                None,
            )),
            Err(e) => Err((StepError::Io { message: e.to_string() }, None)),
        }
    }

    fn run_python(&self, body: &str, ctx: &ExecContext) -> Result<Dispatch, (StepError, Option<(String, String)>)> {
        let io_err = |e: io::Error| (StepError::Io { message: e.to_string() }, None);
        let mut script = tempfile::Builder::new()
            .prefix("npcsh-step-")
            .suffix(".py")
            .tempfile()
            .map_err(io_err)?;
        script.write_all(body.as_bytes()).map_err(io_err)?;
        script.flush().map_err(io_err)?;
        let mut cmd = Command::new(&self.config.python);
        cmd.arg(script.path());
        self.prepare(&mut cmd, ctx).map_err(|e| (e, None))?;
        match process::run(cmd, self.config.step_timeout, self.cancel_flag()) {
            Ok(out) => self.finish_process(out),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err((
                StepError::InterpreterNotFound {
                    program: self.config.python.clone(),
                },
                None,
            )),
            Err(e) => Err(io_err(e)),
        }
    }

    fn hooks(&self) -> Result<&'a dyn ModelHooks, StepError> {
        self.hooks.ok_or_else(|| StepError::Engine {
            message: "no model gateway is attached to this executor".into(),
        })
    }

    fn run_llm(&self, prompt: &str) -> Result<Dispatch, StepError> {
        let reply = self
            .hooks()?
            .llm(prompt)
            .map_err(|message| StepError::ProviderError { message })?;
        Ok(Dispatch {
            value: Value::from_output(reply.clone()),
            stdout: reply,
            stderr: String::new(),
        })
    }

    fn run_static(&self, content: String, ctx: &ExecContext) -> Result<Dispatch, StepError> {
        let text = match ctx.bindings.get("section").map(Value::display) {
            Some(section) if !section.trim().is_empty() => crate::team_orchestrator::select_section(&content, &section)
                .map_err(|e| StepError::Engine { message: e.to_string() })?,
            _ => content,
        };
        Ok(Dispatch {
            value: Value::text(text.clone()),
            stdout: text,
            stderr: String::new(),
        })
    }

    fn run_delegate(&self, step: &StepDef, ctx: &ExecContext) -> Result<Dispatch, StepError> {
        let args = step.args.as_ref().ok_or_else(|| StepError::Engine {
            message: "delegate steps need args (target, task)".into(),
        })?;
        let get = |key: &str| -> Result<Option<String>, StepError> {
            args.get(key)
                .map(|t| render_template(t, &ctx.bindings).map_err(StepError::from))
                .transpose()
        };
        let target = get("target")?.filter(|s| !s.trim().is_empty()).ok_or_else(|| StepError::Engine {
            message: "delegate: `target` is required".into(),
        })?;
        let task = get("task")?.filter(|s| !s.trim().is_empty()).ok_or_else(|| StepError::Engine {
            message: "delegate: `task` is required".into(),
        })?;
        let max_iterations = match get("max_iterations")? {
            None => 3,
            Some(s) => s.trim().parse::<usize>().ok().filter(|n| *n >= 1).ok_or_else(|| StepError::Engine {
                message: format!("delegate: max_iterations must be a positive integer, got `{s}`"),
            })?,
        };
        let request = DelegateRequest {
            target,
            task,
            completion_criteria: get("completion_criteria")?.unwrap_or_default(),
            max_iterations,
            feedback_mode: get("feedback_mode")?.unwrap_or_else(|| "verbatim".into()),
            checker_template: step.body.clone(),
            bindings: ctx.bindings.clone(),
        };
        let reply = self
            .hooks()?
            .delegate(request)
            .map_err(|message| StepError::Engine { message })?;
        Ok(Dispatch {
            value: Value::from_output(reply.clone()),
            stdout: reply,
            stderr: String::new(),
        })
    }
}
