use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::cat_model::{JinxDef, StepDef};

/// Name-based Jinx lookup used for engine resolution.
pub trait JinxResolver {
    fn lookup(&self, name: &str) -> Option<Arc<JinxDef>>;
}

impl JinxResolver for BTreeMap<String, Arc<JinxDef>> {
    fn lookup(&self, name: &str) -> Option<Arc<JinxDef>> {
        self.get(name).cloned()
    }
}

/// Engines implemented by the runtime itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinEngine {
    Shell,
    Bash,
    Python,
    Llm,
    Static,
    Delegate,
}

impl BuiltinEngine {
    pub fn from_id(id: &str) -> Option<BuiltinEngine> {
        match id {
            "sh" => Some(BuiltinEngine::Shell),
            "bash" => Some(BuiltinEngine::Bash),
            "python" => Some(BuiltinEngine::Python),
            "llm" => Some(BuiltinEngine::Llm),
            "static" => Some(BuiltinEngine::Static),
            "delegate" => Some(BuiltinEngine::Delegate),
            _ => None,
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            BuiltinEngine::Shell => "sh",
            BuiltinEngine::Bash => "bash",
            BuiltinEngine::Python => "python",
            BuiltinEngine::Llm => "llm",
            BuiltinEngine::Static => "static",
            BuiltinEngine::Delegate => "delegate",
        }
    }
}

#[derive(Debug, Clone)]
pub enum EngineRef {
    Builtin(BuiltinEngine),
    Jinx(Arc<JinxDef>),
}

/// Resolve a step's engine. Jinx names in scope win over built-in engine ids,
/// except that a Jinx whose own name is an engine id wraps that engine.
pub fn resolve_engine(owner: &JinxDef, step: &StepDef, resolver: &dyn JinxResolver) -> Option<EngineRef> {
    let builtin = BuiltinEngine::from_id(&step.engine);
    if step.engine == owner.name {
        if let Some(b) = builtin {
            return Some(EngineRef::Builtin(b));
        }
    }
    resolver
        .lookup(&step.engine)
        .map(EngineRef::Jinx)
        .or(builtin.map(EngineRef::Builtin))
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphError {
    #[error("jinx reference cycle: {}", path.join(" -> "))]
    CycleDetected { path: Vec<String> },
    #[error("jinx `{referenced_by}` uses unknown engine or jinx `{name}`")]
    UnknownJinx { name: String, referenced_by: String },
}

/// Jinx names reachable from a root, edges pointing from user to used.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpansionGraph {
    pub root: String,
    /// Topological order: every node precedes the nodes it uses.
    pub nodes: Vec<String>,
    pub edges: BTreeSet<(String, String)>,
}

impl ExpansionGraph {
    pub fn contains(&self, name: &str) -> bool {
        self.nodes.iter().any(|n| n == name)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Mark {
    Active,
    Done,
}

struct Walk<'r> {
    resolver: &'r dyn JinxResolver,
    marks: BTreeMap<String, Mark>,
    stack: Vec<String>,
    postorder: Vec<String>,
    edges: BTreeSet<(String, String)>,
}

impl Walk<'_> {
    fn visit(&mut self, jinx: &JinxDef) -> Result<(), GraphError> {
        self.marks.insert(jinx.name.clone(), Mark::Active);
        self.stack.push(jinx.name.clone());
        for step in &jinx.steps {
            let used = match resolve_engine(jinx, step, self.resolver) {
                Some(EngineRef::Builtin(_)) => continue,
                Some(EngineRef::Jinx(j)) => j,
                None => {
                    return Err(GraphError::UnknownJinx {
                        name: step.engine.clone(),
                        referenced_by: jinx.name.clone(),
                    })
                }
            };
            self.edges.insert((jinx.name.clone(), used.name.clone()));
            match self.marks.get(&used.name) {
                Some(Mark::Done) => {}
                Some(Mark::Active) => {
                    let start = self.stack.iter().position(|n| *n == used.name).unwrap_or(0);
                    let mut path = self.stack[start..].to_vec();
                    path.push(used.name.clone());
                    return Err(GraphError::CycleDetected { path });
                }
                None => self.visit(&used)?,
            }
        }
        self.stack.pop();
        self.marks.insert(jinx.name.clone(), Mark::Done);
        self.postorder.push(jinx.name.clone());
        Ok(())
    }
}

pub fn expansion_graph(jinx: &JinxDef, resolver: &dyn JinxResolver) -> Result<ExpansionGraph, GraphError> {
    let mut walk = Walk {
        resolver,
        marks: BTreeMap::new(),
        stack: Vec::new(),
        postorder: Vec::new(),
        edges: BTreeSet::new(),
    };
    walk.visit(jinx)?;
    let mut nodes = walk.postorder;
    nodes.reverse();
    Ok(ExpansionGraph {
        root: jinx.name.clone(),
        nodes,
        edges: walk.edges,
    })
}
