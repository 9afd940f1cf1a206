//! npcsh core: the declarative context/agent/tool layer and its runtime.
//!
//! - [`cat_model`]: parsing and loading of `.jinx`, `.npc` and `.ctx` files into team graphs
//! - [`jinx_engine`]: template rendering, expansion graphs and step execution
//! - [`tool_schema`]: tool schemas, per-agent catalogs, tool-call parsing and enforcement
//! - [`llm_gateway`]: OpenAI-compatible chat client plus a scripted provider
//! - [`team_orchestrator`]: agent loop, routing, delegation and skills
//! - [`shell`]: slash-command dispatch shared by the interactive shell
//! - [`bench_harness`]: benchmark suites, attempts with retries, trace logs
//! - [`trace_analytics`]: score tables, retry gains and correlations

pub mod bench_harness;
pub mod cat_model;
pub mod jinx_engine;
pub mod llm_gateway;
pub mod process;
pub mod shell;
pub mod team_orchestrator;
pub mod tool_schema;
pub mod trace_analytics;

pub use cat_model::{ContextDef, InputDecl, JinxDef, NpcDef, Scope, StepDef, Team, TypeTag};
pub use jinx_engine::{ExecConfig, ExecContext, Executor, JinxResult, StepOutput, Value};
pub use llm_gateway::{ChatMessage, ChatProvider, ModelResponse, ProviderRegistry, ScriptedProvider};
pub use tool_schema::{Catalog, ToolCall, ToolSchema};
