//! Jinx execution.
//!
//! Steps run strictly in order. Each step's body is rendered against the
//! bindings visible so far (inputs plus earlier step outputs) and dispatched
//! to its engine; a step whose engine is another Jinx expands in place.

mod exec;
mod graph;
mod template;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;
use serde_json::Value as Json;
use thiserror::Error;

pub use exec::{DelegateRequest, ExecObserver, Executor, ModelHooks};
pub use graph::{expansion_graph, resolve_engine, BuiltinEngine, EngineRef, ExpansionGraph, GraphError, JinxResolver};
pub use template::{evaluate_single, render_template, TemplateError};

pub const DEFAULT_MAX_DEPTH: usize = 8;
pub const DEFAULT_STEP_BUDGET: usize = 64;
pub const DEFAULT_STEP_TIMEOUT: Duration = Duration::from_secs(120);

/// A bound value: either plain data (inputs) or captured step output.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Value {
    Data(Json),
    /// Step output text; `structured` holds a trailing JSON line, if any.
    Output { text: String, structured: Option<Json> },
}

impl Value {
    pub fn text(s: impl Into<String>) -> Value {
        Value::Output {
            text: s.into(),
            structured: None,
        }
    }

    /// Wrap captured output, exposing a final JSON object/array line for dotted access.
    pub fn from_output(text: impl Into<String>) -> Value {
        let text = text.into();
        let structured = text
            .lines()
            .rev()
            .map(str::trim)
            .find(|l| !l.is_empty())
            .filter(|l| l.starts_with('{') || l.starts_with('['))
            .and_then(|l| serde_json::from_str::<Json>(l).ok());
        Value::Output { text, structured }
    }

    pub fn display(&self) -> String {
        match self {
            Value::Output { text, .. } => text.clone(),
            Value::Data(Json::String(s)) => s.clone(),
            Value::Data(Json::Null) => String::new(),
            Value::Data(other) => other.to_string(),
        }
    }

    /// Value as passed into another Jinx's inputs.
    pub fn to_json(&self) -> Json {
        match self {
            Value::Data(j) => j.clone(),
            Value::Output { text, .. } => Json::String(text.clone()),
        }
    }
}

pub type Bindings = BTreeMap<String, Value>;

#[derive(Debug, Clone)]
pub struct ExecConfig {
    /// Interpreter for the `python` engine (`NPCSH_PYTHON`, default `python3`).
    pub python: String,
    pub step_timeout: Option<Duration>,
    pub max_depth: usize,
    pub step_budget: usize,
    /// Set to abort the in-flight step.
    pub cancel: Option<Arc<AtomicBool>>,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            python: std::env::var("NPCSH_PYTHON").unwrap_or_else(|_| "python3".into()),
            step_timeout: Some(DEFAULT_STEP_TIMEOUT),
            max_depth: DEFAULT_MAX_DEPTH,
            step_budget: DEFAULT_STEP_BUDGET,
            cancel: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExecContext {
    pub bindings: Bindings,
    pub workdir: PathBuf,
    pub env: BTreeMap<String, String>,
    pub depth: usize,
    /// Steps left for the whole top-level invocation, nested ones included.
    pub budget: usize,
}

impl ExecContext {
    pub fn new(workdir: impl Into<PathBuf>, env: BTreeMap<String, String>, config: &ExecConfig) -> Self {
        ExecContext {
            bindings: Bindings::new(),
            workdir: workdir.into(),
            env,
            depth: 0,
            budget: config.step_budget,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepOutput {
    pub step_name: String,
    pub value: Value,
    pub stdout: String,
    pub stderr: String,
    pub status: Status,
    /// Seconds.
    pub duration: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JinxResult {
    pub jinx_name: String,
    pub outputs: Vec<StepOutput>,
    #[serde(rename = "final")]
    pub final_value: Value,
    pub status: Status,
    pub failure: Option<StepFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepFailure {
    pub step: String,
    pub error: StepError,
}

impl JinxResult {
    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    /// Copy with every duration zeroed, for comparisons that ignore timing.
    pub fn normalized(&self) -> JinxResult {
        let mut r = self.clone();
        for o in &mut r.outputs {
            o.duration = 0.0;
        }
        r
    }

    /// Text handed back to a model or printed by the shell.
    pub fn render(&self) -> String {
        match &self.failure {
            None => self.final_value.display(),
            Some(f) => {
                let mut s = format!("error in step `{}`: {}", f.step, f.error);
                if let Some(out) = self.outputs.last() {
                    if !out.stdout.trim().is_empty() {
                        s.push_str("\nstdout:\n");
                        s.push_str(out.stdout.trim_end());
                    }
                }
                s
            }
        }
    }

    pub fn into_checked(self) -> Result<JinxResult, ExecError> {
        match self.failure {
            None => Ok(self),
            Some(f) => Err(ExecError::StepFailed {
                jinx: self.jinx_name,
                step: f.step,
                source: f.error,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExecError {
    #[error("jinx `{jinx}`: missing required input `{input}`")]
    MissingInput { jinx: String, input: String },
    #[error("jinx `{jinx}`: input `{input}` expects {expected}, got {value}")]
    TypeMismatch {
        jinx: String,
        input: String,
        expected: String,
        value: String,
    },
    #[error("jinx `{jinx}` has no input `{input}`")]
    UnknownInput { jinx: String, input: String },
    #[error("step budget of {limit} exhausted")]
    BudgetExhausted { limit: usize },
    #[error("expansion depth limit {limit} exceeded")]
    DepthExceeded { limit: usize },
    #[error("binding `{name}` already exists")]
    BindingOverwrite { name: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("jinx `{jinx}` failed in step `{step}`: {source}")]
    StepFailed {
        jinx: String,
        step: String,
        source: StepError,
    },
}

#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepError {
    #[error("exit status {code}: {stderr}")]
    NonzeroExit { code: i32, stderr: String },
    #[error("killed by signal: {stderr}")]
    Signaled { stderr: String },
    #[error("interpreter `{program}` not found")]
    InterpreterNotFound { program: String },
    #[error("provider error: {message}")]
    ProviderError { message: String },
    #[error("timed out after {seconds}s")]
    Timeout { seconds: f64 },
    #[error("cancelled")]
    Cancelled,
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("io error: {message}")]
    Io { message: String },
    #[error("unknown engine `{engine}`")]
    UnknownEngine { engine: String },
    #[error("{0}")]
    Nested(Box<ExecError>),
    #[error("{message}")]
    Engine { message: String },
}
