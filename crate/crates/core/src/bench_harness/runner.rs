use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::agents::{Agent, AgentTranscript, AttemptRequest};
use super::log::TraceLog;
use super::{AttemptTrace, BenchConfig, BenchTask, Outcome, TaskResult};
use crate::llm_gateway::ChatMessage;
use crate::process::{self, Termination};

pub const FEEDBACK_PREAMBLE: &str =
    "Your previous attempt did not pass verification. Review the output below, fix the problem, and try again.";
/// Characters of agent and verification output carried into feedback.
pub const FEEDBACK_TAIL: usize = 2000;

/// Corrective preamble plus the bounded tail of the agent's output and the
/// verification output.
pub fn build_feedback(agent_output: &str, verification_output: &str) -> String {
    let combined = format!(
        "Agent output:\n{}\n\nVerification output:\n{}",
        agent_output.trim_end(),
        verification_output.trim_end()
    );
    let count = combined.chars().count();
    let tail: String = combined.chars().skip(count.saturating_sub(FEEDBACK_TAIL)).collect();
    format!("{FEEDBACK_PREAMBLE}\n\n{tail}")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub passed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub passed: usize,
    pub total: usize,
    pub per_category: BTreeMap<String, Tally>,
}

impl SuiteSummary {
    pub fn from_results(results: &[TaskResult]) -> SuiteSummary {
        let mut s = SuiteSummary::default();
        for r in results {
            let t = s.per_category.entry(r.category.clone()).or_default();
            t.total += 1;
            s.total += 1;
            if r.passed {
                t.passed += 1;
                s.passed += 1;
            }
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    /// In suite order, whatever order the workers finished in.
    pub results: Vec<TaskResult>,
    pub summary: SuiteSummary,
}

fn workdir(task: &BenchTask, config: &BenchConfig) -> std::io::Result<tempfile::TempDir> {
    let label: String = task
        .id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    let prefix = format!("npcsh-bench-{label}-");
    let mut builder = tempfile::Builder::new();
    builder.prefix(&prefix);
    match &config.workdir_root {
        Some(root) => {
            std::fs::create_dir_all(root)?;
            builder.tempdir_in(root)
        }
        None => builder.tempdir(),
    }
}

fn shell_output(out: &process::ProcessOutput) -> String {
    let mut text = out.stdout.clone();
    if !out.stderr.is_empty() {
        if !text.is_empty() && !text.ends_with('\n') {
            text.push('\n');
        }
        text.push_str(&out.stderr);
    }
    text
}

fn run_in(cmd_line: &str, dir: &std::path::Path, timeout: Duration) -> Result<process::ProcessOutput, String> {
    let mut cmd = process::shell_command(cmd_line);
    cmd.current_dir(dir);
    process::run(cmd, Some(timeout), None).map_err(|e| format!("cannot run `{cmd_line}`: {e}"))
}

enum AgentRun {
    Finished(AgentTranscript, Duration),
    TimedOut(Option<AgentTranscript>, Duration),
    Crashed(Duration),
}

/// Run one attempt on its own thread, cancelling it when `limit` passes.
fn run_agent(agent: &Arc<dyn Agent>, request: AttemptRequest, limit: Duration, grace: Duration) -> AgentRun {
    let (tx, rx) = mpsc::channel();
    let cancel = request.cancel.clone();
    let worker = agent.clone();
    let start = Instant::now();
    let spawned = thread::Builder::new()
        .name(format!("bench-{}-{}", request.task.id, request.attempt_index))
        .spawn(move || {
            let _ = tx.send(worker.attempt(&request));
        });
    if spawned.is_err() {
        return AgentRun::Crashed(start.elapsed());
    }
    match rx.recv_timeout(limit) {
        Ok(t) => AgentRun::Finished(t, start.elapsed()),
        Err(RecvTimeoutError::Disconnected) => AgentRun::Crashed(start.elapsed()),
        Err(RecvTimeoutError::Timeout) => {
            let elapsed = start.elapsed();
            cancel.store(true, Ordering::SeqCst);
            // A well-behaved agent stops promptly once cancelled; anything still
            // running after the grace period is abandoned.
            let late = rx.recv_timeout(grace).ok();
            if late.is_none() {
                tracing::warn!("agent did not stop within {grace:?} of cancellation; abandoning it");
            }
            AgentRun::TimedOut(late, elapsed)
        }
    }
}

fn task_timeout(task: &BenchTask, config: &BenchConfig) -> Duration {
    task.timeout.map(Duration::from_secs_f64).unwrap_or(config.timeout)
}

/// Run one task: fresh workdir, setup once, then up to `max_attempts`
/// attempts each graded by the verification command.
pub fn run_task(task: &BenchTask, agent: Arc<dyn Agent>, config: &BenchConfig) -> TaskResult {
    let mut result = TaskResult {
        task_id: task.id.clone(),
        category: task.category.clone(),
        model: config.model.clone(),
        provider: config.provider.clone(),
        attempts: Vec::new(),
        passed: false,
        first_attempt_pass: false,
        max_attempts: config.max_attempts,
        call_mode: None,
        error: None,
    };
    let setup_failed = |result: &mut TaskResult, message: String| {
        tracing::warn!("task {}: {message}", task.id);
        result.attempts.push(AttemptTrace {
            attempt_index: 1,
            tool_calls: 0,
            rejected_calls: 0,
            duration: 0.0,
            model_turns: 0,
            outcome: Outcome::Error,
            feedback_given: None,
            verify_exit: None,
            error: Some(message.clone()),
        });
        result.error = Some(message);
    };
    if config.max_attempts == 0 {
        return result;
    }
    let dir = match workdir(task, config) {
        Ok(d) => d,
        Err(e) => {
            setup_failed(&mut result, format!("cannot create workdir: {e}"));
            return result;
        }
    };
    let path: PathBuf = dir.path().to_path_buf();
    if let Some(setup) = &task.setup_cmd {
        match run_in(setup, &path, config.verify_timeout) {
            Ok(out) if out.success() => {}
            Ok(out) => {
                setup_failed(
                    &mut result,
                    format!("setup failed ({:?}): {}", out.termination, shell_output(&out).trim()),
                );
                return result;
            }
            Err(e) => {
                setup_failed(&mut result, format!("setup failed: {e}"));
                return result;
            }
        }
    }

    let limit = task_timeout(task, config);
    let task_start = Instant::now();
    let mut feedback: Option<String> = None;
    let mut history: Vec<ChatMessage> = Vec::new();
    for attempt_index in 1..=config.max_attempts {
        let attempt_limit = if config.whole_task_budget {
            match limit.checked_sub(task_start.elapsed()) {
                Some(rest) if !rest.is_zero() => rest,
                _ => break,
            }
        } else {
            limit
        };
        let instruction = match &feedback {
            Some(f) => format!("{}\n\n{f}", task.instruction),
            None => task.instruction.clone(),
        };
        let request = AttemptRequest {
            task: task.clone(),
            instruction,
            workdir: path.clone(),
            attempt_index,
            feedback: feedback.clone(),
            cancel: Arc::new(AtomicBool::new(false)),
            history: if config.fresh_context { Vec::new() } else { history.clone() },
        };
        let mut trace = AttemptTrace {
            attempt_index,
            tool_calls: 0,
            rejected_calls: 0,
            duration: 0.0,
            model_turns: 0,
            outcome: Outcome::Error,
            feedback_given: feedback.clone(),
            verify_exit: None,
            error: None,
        };
        let absorb = |trace: &mut AttemptTrace, t: &AgentTranscript| {
            trace.tool_calls = t.tool_calls;
            trace.rejected_calls = t.rejected_calls;
            trace.model_turns = t.model_turns;
            trace.error = t.error.clone();
        };

        let next_feedback = match run_agent(&agent, request, attempt_limit, config.grace) {
            AgentRun::Finished(transcript, elapsed) => {
                trace.duration = elapsed.as_secs_f64();
                absorb(&mut trace, &transcript);
                if result.call_mode.is_none() {
                    result.call_mode = transcript.call_mode.clone();
                }
                history = transcript.messages.clone();
                let verify_text = match run_in(&task.verify_cmd, &path, config.verify_timeout) {
                    Ok(out) => {
                        trace.verify_exit = out.exit_code();
                        trace.outcome = if out.success() {
                            Outcome::Pass
                        } else if transcript.error.is_some() {
                            Outcome::Error
                        } else {
                            Outcome::Fail
                        };
                        let mut text = shell_output(&out);
                        if out.termination == Termination::TimedOut {
                            text.push_str("\n(verification timed out)");
                        }
                        text
                    }
                    Err(e) => {
                        trace.outcome = Outcome::Error;
                        trace.error.get_or_insert_with(|| e.clone());
                        e
                    }
                };
                let mut agent_text = transcript.text.clone();
                if let Some(e) = &transcript.error {
                    agent_text.push_str(&format!("\nerror: {e}"));
                }
                build_feedback(&agent_text, &verify_text)
            }
            AgentRun::TimedOut(late, elapsed) => {
                trace.duration = elapsed.as_secs_f64();
                trace.outcome = Outcome::Timeout;
                let agent_text = match &late {
                    Some(t) => {
                        absorb(&mut trace, t);
                        if result.call_mode.is_none() {
                            result.call_mode = t.call_mode.clone();
                        }
                        history = t.messages.clone();
                        t.text.clone()
                    }
                    None => String::new(),
                };
                trace.error = Some(format!("attempt timed out after {:.1} s", attempt_limit.as_secs_f64()));
                build_feedback(&agent_text, trace.error.as_deref().unwrap_or_default())
            }
            AgentRun::Crashed(elapsed) => {
                trace.duration = elapsed.as_secs_f64();
                trace.error = Some("agent crashed".into());
                build_feedback("", "agent crashed before producing output")
            }
        };
        let passed = trace.outcome == Outcome::Pass;
        tracing::debug!("task {} attempt {attempt_index}: {:?}", task.id, trace.outcome);
        result.attempts.push(trace);
        if passed {
            result.passed = true;
            result.first_attempt_pass = attempt_index == 1;
            break;
        }
        feedback = Some(next_feedback);
    }
    result
}

/// Run every task, up to `config.workers` at a time, streaming each result
/// to `log` as it completes.
pub fn run_suite(tasks: &[BenchTask], agent: Arc<dyn Agent>, config: &BenchConfig, log: Option<&TraceLog>) -> SuiteReport {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<TaskResult>>> = Mutex::new(vec![None; tasks.len()]);
    let workers = config.workers.clamp(1, tasks.len().max(1));
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(task) = tasks.get(i) else { break };
                let result = run_task(task, agent.clone(), config);
                if let Some(log) = log {
                    if let Err(e) = log.append(&result) {
                        tracing::error!("trace log: {e}");
                    }
                }
                slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(result);
            });
        }
    });
    let results: Vec<TaskResult> = slots
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .flatten()
        .collect();
    let summary = SuiteSummary::from_results(&results);
    SuiteReport { results, summary }
}
