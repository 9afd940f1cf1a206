//! Benchmark execution: suites of (instruction, verification command) tasks
//! run against an agent in isolated working directories, with a timeout per
//! attempt and bounded retries that carry error feedback.

mod agents;
mod log;
mod runner;
mod suite;

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use agents::{Agent, AgentTranscript, AttemptRequest, CommandAgent, NpcAgent, ProviderFactory};
pub use log::{read_log, read_log_str, TraceLog, SCHEMA_VERSION};
pub use runner::{build_feedback, run_suite, run_task, SuiteReport, SuiteSummary, Tally, FEEDBACK_PREAMBLE, FEEDBACK_TAIL};
pub use suite::{load_suite, parse_suite, BenchTask, Suite, SEED_SUITE};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(360);
pub const DEFAULT_MAX_ATTEMPTS: usize = 5;

#[derive(Debug, Clone)]
pub struct BenchConfig {
    /// Bound per attempt (or per task with `whole_task_budget`); a task's own timeout wins.
    pub timeout: Duration,
    pub max_attempts: usize,
    /// Start every attempt from an empty conversation instead of accumulating.
    pub fresh_context: bool,
    /// Apply `timeout` to all attempts of a task together.
    pub whole_task_budget: bool,
    pub workers: usize,
    /// Labels recorded in every TaskResult.
    pub model: String,
    pub provider: String,
    /// How long a timed-out agent gets to stop after cancellation.
    pub grace: Duration,
    pub verify_timeout: Duration,
    /// Parent directory for task workdirs (system temp dir when unset).
    pub workdir_root: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            timeout: DEFAULT_TIMEOUT,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            fresh_context: false,
            whole_task_budget: false,
            workers: 1,
            model: "unknown".into(),
            provider: "unknown".into(),
            grace: Duration::from_secs(1),
            verify_timeout: Duration::from_secs(60),
            workdir_root: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail,
    Timeout,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptTrace {
    /// 1-based.
    pub attempt_index: usize,
    /// Calls that passed enforcement.
    pub tool_calls: usize,
    #[serde(default)]
    pub rejected_calls: usize,
    /// Agent wall time in seconds, verification excluded.
    pub duration: f64,
    pub model_turns: usize,
    pub outcome: Outcome,
    pub feedback_given: Option<String>,
    #[serde(default)]
    pub verify_exit: Option<i32>,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    #[serde(default)]
    pub category: String,
    pub model: String,
    pub provider: String,
    pub attempts: Vec<AttemptTrace>,
    pub passed: bool,
    pub first_attempt_pass: bool,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: usize,
    /// Tool-call convention in effect: `native` or `prompted`.
    #[serde(default)]
    pub call_mode: Option<String>,
    /// Task-level failure outside any attempt, e.g. a failing setup command.
    #[serde(default)]
    pub error: Option<String>,
}

fn default_max_attempts() -> usize {
    DEFAULT_MAX_ATTEMPTS
}

impl TaskResult {
    pub fn attempts_used(&self) -> usize {
        self.attempts.len()
    }

    pub fn tool_calls(&self) -> usize {
        self.attempts.iter().map(|a| a.tool_calls).sum()
    }

    pub fn duration(&self) -> f64 {
        self.attempts.iter().map(|a| a.duration).sum()
    }

    /// Copy with all wall-clock fields zeroed, for run-to-run comparison.
    pub fn normalized(&self) -> TaskResult {
        let mut r = self.clone();
        for a in &mut r.attempts {
            a.duration = 0.0;
        }
        r
    }

    /// Internal consistency of a recorded result.
    pub fn check(&self) -> Result<(), String> {
        let any_pass = self.attempts.iter().any(|a| a.outcome == Outcome::Pass);
        if self.passed != any_pass {
            return Err(format!("{}: passed={} but attempts say {any_pass}", self.task_id, self.passed));
        }
        if self.first_attempt_pass && !self.passed {
            return Err(format!("{}: first_attempt_pass without pass", self.task_id));
        }
        if self.first_attempt_pass != self.attempts.first().is_some_and(|a| a.outcome == Outcome::Pass) {
            return Err(format!("{}: first_attempt_pass disagrees with attempt 1", self.task_id));
        }
        if self.attempts.len() > self.max_attempts {
            return Err(format!("{}: {} attempts exceed max {}", self.task_id, self.attempts.len(), self.max_attempts));
        }
        for (i, a) in self.attempts.iter().enumerate() {
            if a.attempt_index != i + 1 || a.duration < 0.0 {
                return Err(format!("{}: bad attempt record {i}", self.task_id));
            }
            if a.outcome == Outcome::Pass && a.verify_exit != Some(0) {
                return Err(format!("{}: pass without verify exit 0", self.task_id));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{origin}: malformed suite: {message}")]
    MalformedSuite { origin: String, message: String },
    #[error("duplicate task id `{id}`")]
    DuplicateTaskId { id: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}:{line}: bad trace record: {message}")]
    BadRecord { origin: String, line: usize, message: String },
    #[error("unsupported trace schema version {found} (expected {SCHEMA_VERSION})")]
    SchemaVersion { found: u64 },
}
