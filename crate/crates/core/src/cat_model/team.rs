use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::builtin::builtin_catalog;
use super::parse::{parse_context, parse_jinx, parse_npc};
use super::{CatError, ContextDef, JinxDef, NpcDef};
use crate::jinx_engine::{expansion_graph, GraphError, JinxResolver};

/// Name of the per-team tool directory.
pub const JINX_DIR: &str = "jinxes";

#[derive(Debug, Clone)]
pub struct Team {
    /// Directory name (the sub-team name for nested teams).
    pub name: String,
    pub path: PathBuf,
    pub context: ContextDef,
    pub npcs: BTreeMap<String, NpcDef>,
    /// Keyed by declared Jinx name, regardless of folder layout.
    pub jinx_catalog: BTreeMap<String, Arc<JinxDef>>,
    pub sub_teams: BTreeMap<String, Team>,
    /// Non-fatal loader notes, e.g. a Jinx whose file stem differs from its name.
    pub warnings: Vec<String>,
}

impl Team {
    pub fn scope(&self) -> Scope<'_> {
        Scope { chain: vec![self] }
    }

    pub fn orchestrator(&self) -> Option<&NpcDef> {
        self.npcs.get(&self.context.orchestrator)
    }

    /// Locate an NPC by name: this team first, then sub-teams breadth-first.
    pub fn find_npc(&self, name: &str) -> Option<NpcHandle> {
        let mut queue: Vec<(Vec<String>, &Team)> = vec![(Vec::new(), self)];
        while !queue.is_empty() {
            let mut next = Vec::new();
            for (path, team) in queue {
                if team.npcs.contains_key(name) {
                    return Some(NpcHandle {
                        team_path: path,
                        name: name.to_string(),
                    });
                }
                for (sub_name, sub) in &team.sub_teams {
                    let mut p = path.clone();
                    p.push(sub_name.clone());
                    next.push((p, sub));
                }
            }
            queue = next;
        }
        None
    }

    /// Scope of the team reached by following `path` from this team.
    pub fn scope_at(&self, path: &[String]) -> Option<Scope<'_>> {
        let mut scope = self.scope();
        for name in path {
            scope = scope.enter(name)?;
        }
        Some(scope)
    }

    pub fn npc(&self, handle: &NpcHandle) -> Option<&NpcDef> {
        self.scope_at(&handle.team_path)?.team().npcs.get(&handle.name)
    }
}

/// Address of an NPC inside a team tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize)]
pub struct NpcHandle {
    pub team_path: Vec<String>,
    pub name: String,
}

impl fmt::Display for NpcHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.team_path {
            write!(f, "{p}/")?;
        }
        f.write_str(&self.name)
    }
}

/// A team together with its ancestors, innermost last.
#[derive(Debug, Clone)]
pub struct Scope<'a> {
    chain: Vec<&'a Team>,
}

impl<'a> Scope<'a> {
    pub fn team(&self) -> &'a Team {
        self.chain.last().expect("scope is never empty")
    }

    pub fn root(&self) -> &'a Team {
        self.chain[0]
    }

    pub fn enter(&self, sub_team: &str) -> Option<Scope<'a>> {
        let sub = self.team().sub_teams.get(sub_team)?;
        let mut chain = self.chain.clone();
        chain.push(sub);
        Some(Scope { chain })
    }

    pub fn path(&self) -> Vec<String> {
        self.chain[1..].iter().map(|t| t.name.clone()).collect()
    }

    /// Nearest team catalog first, then ancestors, then the built-in catalog.
    pub fn lookup(&self, name: &str) -> Option<Arc<JinxDef>> {
        self.chain
            .iter()
            .rev()
            .find_map(|t| t.jinx_catalog.get(name).cloned())
            .or_else(|| builtin_catalog().get(name).cloned())
    }

    /// Shared environment, nearer teams overriding ancestors.
    pub fn env(&self) -> BTreeMap<String, String> {
        let mut env = BTreeMap::new();
        for t in &self.chain {
            env.extend(t.context.env.iter().map(|(k, v)| (k.clone(), v.clone())));
        }
        env
    }

    pub fn default_model(&self) -> Option<&'a str> {
        self.chain
            .iter()
            .rev()
            .find_map(|t| t.context.default_model.as_deref())
    }

    pub fn default_provider(&self) -> Option<&'a str> {
        self.chain
            .iter()
            .rev()
            .find_map(|t| t.context.default_provider.as_deref())
    }

    /// Every Jinx name visible from this scope.
    pub fn visible_names(&self) -> BTreeSet<String> {
        let mut names: BTreeSet<String> = builtin_catalog().keys().cloned().collect();
        for t in &self.chain {
            names.extend(t.jinx_catalog.keys().cloned());
        }
        names
    }
}

impl JinxResolver for Scope<'_> {
    fn lookup(&self, name: &str) -> Option<Arc<JinxDef>> {
        Scope::lookup(self, name)
    }
}

pub fn resolve_jinx(name: &str, scope: &Scope<'_>) -> Result<Arc<JinxDef>, CatError> {
    scope.lookup(name).ok_or_else(|| CatError::UnknownJinx {
        name: name.to_string(),
    })
}

fn io_err(path: &Path, source: std::io::Error) -> CatError {
    CatError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, CatError> {
    let mut entries = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let name = entry.file_name();
        if name.to_string_lossy().starts_with('.') {
            continue;
        }
        entries.push(entry.path());
    }
    entries.sort();
    Ok(entries)
}

fn has_ext(path: &Path, ext: &str) -> bool {
    path.is_file() && path.extension().is_some_and(|e| e == ext)
}

fn read(path: &Path) -> Result<String, CatError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn collect_jinxes(
    dir: &Path,
    catalog: &mut BTreeMap<String, Arc<JinxDef>>,
    warnings: &mut Vec<String>,
) -> Result<(), CatError> {
    for path in sorted_entries(dir)? {
        if path.is_dir() {
            collect_jinxes(&path, catalog, warnings)?;
        } else if has_ext(&path, "jinx") {
            let jinx = parse_jinx(&read(&path)?, &path)?;
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned());
            if stem.as_deref() != Some(jinx.name.as_str()) {
                let note = format!(
                    "{}: file name differs from declared jinx name `{}`",
                    path.display(),
                    jinx.name
                );
                tracing::warn!("{note}");
                warnings.push(note);
            }
            if let Some(first) = catalog.get(&jinx.name) {
                return Err(CatError::DuplicateJinxName {
                    name: jinx.name.clone(),
                    first: first.source_path.display().to_string(),
                    second: path.display().to_string(),
                });
            }
            catalog.insert(jinx.name.clone(), Arc::new(jinx));
        }
    }
    Ok(())
}

fn contains_context(dir: &Path) -> bool {
    fs::read_dir(dir)
        .map(|rd| rd.flatten().any(|e| has_ext(&e.path(), "ctx")))
        .unwrap_or(false)
}

/// Load a team directory and every sub-team beneath it.
pub fn load_team(dir: &Path) -> Result<Team, CatError> {
    let entries = sorted_entries(dir)?;
    let dir_text = dir.display().to_string();

    let ctx_files: Vec<&PathBuf> = entries.iter().filter(|p| has_ext(p, "ctx")).collect();
    let context = match ctx_files.as_slice() {
        [] => return Err(CatError::NoContextFile { dir: dir_text }),
        [one] => parse_context(&read(one)?, one)?,
        many => {
            return Err(CatError::MultipleContextFiles {
                dir: dir_text,
                files: many.iter().map(|p| p.display().to_string()).collect(),
            })
        }
    };

    let mut npcs = BTreeMap::new();
    for path in entries.iter().filter(|p| has_ext(p, "npc")) {
        let npc = parse_npc(&read(path)?, path)?;
        if npcs.contains_key(&npc.name) {
            return Err(CatError::DuplicateName {
                origin: path.display().to_string(),
                name: npc.name,
            });
        }
        npcs.insert(npc.name.clone(), npc);
    }

    let mut jinx_catalog = BTreeMap::new();
    let mut warnings = Vec::new();
    let jinx_dir = dir.join(JINX_DIR);
    if jinx_dir.is_dir() {
        collect_jinxes(&jinx_dir, &mut jinx_catalog, &mut warnings)?;
    }

    let mut sub_teams = BTreeMap::new();
    for path in entries.iter().filter(|p| p.is_dir()) {
        if path.file_name().is_some_and(|n| n == JINX_DIR) || !contains_context(path) {
            continue;
        }
        let sub = load_team(path)?;
        if npcs.contains_key(&sub.name) {
            return Err(CatError::NameCollision {
                dir: dir_text,
                name: sub.name,
            });
        }
        sub_teams.insert(sub.name.clone(), sub);
    }

    if !npcs.contains_key(&context.orchestrator) {
        return Err(CatError::UnresolvedOrchestrator {
            dir: dir_text,
            name: context.orchestrator,
        });
    }

    let name = dir
        .canonicalize()
        .ok()
        .as_deref()
        .unwrap_or(dir)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "team".into());

    Ok(Team {
        name,
        path: dir.to_path_buf(),
        context,
        npcs,
        jinx_catalog,
        sub_teams,
        warnings,
    })
}

/// A static finding that keeps a team from being runnable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Diagnostic {
    UnresolvedJinxRef {
        team_path: Vec<String>,
        npc: String,
        jinx: String,
    },
    CycleDetected {
        team_path: Vec<String>,
        cycle: Vec<String>,
    },
    UnresolvedEngine {
        team_path: Vec<String>,
        jinx: String,
        engine: String,
    },
    MissingOrchestrator {
        team_path: Vec<String>,
        orchestrator: String,
    },
    EmptySubTeamDescription {
        team_path: Vec<String>,
    },
}

fn show_path(p: &[String]) -> String {
    if p.is_empty() {
        "<root>".into()
    } else {
        p.join("/")
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::UnresolvedJinxRef { team_path, npc, jinx } => write!(
                f,
                "{}: npc `{npc}` lists unknown jinx `{jinx}`",
                show_path(team_path)
            ),
            Diagnostic::CycleDetected { team_path, cycle } => {
                write!(f, "{}: jinx cycle {}", show_path(team_path), cycle.join(" -> "))
            }
            Diagnostic::UnresolvedEngine { team_path, jinx, engine } => write!(
                f,
                "{}: jinx `{jinx}` uses unknown engine `{engine}`",
                show_path(team_path)
            ),
            Diagnostic::MissingOrchestrator { team_path, orchestrator } => write!(
                f,
                "{}: orchestrator `{orchestrator}` not found",
                show_path(team_path)
            ),
            Diagnostic::EmptySubTeamDescription { team_path } => {
                write!(f, "{}: sub-team has an empty description", show_path(team_path))
            }
        }
    }
}

/// Canonical rotation so the same cycle found from different roots dedupes.
fn canonical_cycle(cycle: &[String]) -> Vec<String> {
    let ring = &cycle[..cycle.len().saturating_sub(1).max(1)];
    let start = ring
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut out: Vec<String> = ring[start..].iter().chain(&ring[..start]).cloned().collect();
    out.push(out[0].clone());
    out
}

/// Collect every problem in the team tree; an empty list means runnable.
pub fn validate_team(team: &Team) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut seen_cycles = BTreeSet::new();
    validate_scope(&team.scope(), &mut out, &mut seen_cycles);
    out
}

fn validate_scope(scope: &Scope<'_>, out: &mut Vec<Diagnostic>, seen_cycles: &mut BTreeSet<Vec<String>>) {
    let team = scope.team();
    let team_path = scope.path();

    if !team.npcs.contains_key(&team.context.orchestrator) {
        out.push(Diagnostic::MissingOrchestrator {
            team_path: team_path.clone(),
            orchestrator: team.context.orchestrator.clone(),
        });
    }
    if !team_path.is_empty() && team.context.description.trim().is_empty() {
        out.push(Diagnostic::EmptySubTeamDescription {
            team_path: team_path.clone(),
        });
    }
    for npc in team.npcs.values() {
        for entry in &npc.jinx_list {
            if scope.lookup(entry).is_none() {
                out.push(Diagnostic::UnresolvedJinxRef {
                    team_path: team_path.clone(),
                    npc: npc.name.clone(),
                    jinx: entry.clone(),
                });
            }
        }
    }
    for jinx in team.jinx_catalog.values() {
        match expansion_graph(jinx, scope) {
            Ok(_) => {}
            Err(GraphError::CycleDetected { path }) => {
                let canon = canonical_cycle(&path);
                if seen_cycles.insert(canon) {
                    out.push(Diagnostic::CycleDetected {
                        team_path: team_path.clone(),
                        cycle: path,
                    });
                }
            }
            Err(GraphError::UnknownJinx { name, referenced_by }) => {
                let d = Diagnostic::UnresolvedEngine {
                    team_path: team_path.clone(),
                    jinx: referenced_by,
                    engine: name,
                };
                if !out.contains(&d) {
                    out.push(d);
                }
            }
        }
    }
    for sub in team.sub_teams.keys() {
        let inner = scope.enter(sub).expect("sub-team exists");
        validate_scope(&inner, out, seen_cycles);
    }
}
