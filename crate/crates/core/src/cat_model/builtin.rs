use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use super::parse::{parse_context, parse_jinx, parse_npc};
use super::{JinxDef, Team};

const BUILTIN_SOURCES: &[(&str, &str)] = &[
    ("chat", include_str!("../../builtins/chat.jinx")),
    ("computer_use", include_str!("../../builtins/computer_use.jinx")),
    ("delegate", include_str!("../../builtins/delegate.jinx")),
    ("python", include_str!("../../builtins/python.jinx")),
    ("react", include_str!("../../builtins/react.jinx")),
    ("screenshot", include_str!("../../builtins/screenshot.jinx")),
    ("sh", include_str!("../../builtins/sh.jinx")),
    ("web_search", include_str!("../../builtins/web_search.jinx")),
];

const BUNDLED_CTX: &str = "\
orchestrator: orchestrator
description: General-purpose assistant team.
model: llama3.2
provider: ollama
";

const BUNDLED_ORCHESTRATOR: &str = "\
name: orchestrator
primary_directive: |
  You coordinate work in this shell. Answer directly when you can, and use
  your tools when a task needs the filesystem, the shell, code or the web.
jinxs: [sh, python, chat, web_search, screenshot, react, computer_use, delegate]
";

/// The catalog every team scope falls back to.
pub fn builtin_catalog() -> &'static BTreeMap<String, Arc<JinxDef>> {
    static CATALOG: OnceLock<BTreeMap<String, Arc<JinxDef>>> = OnceLock::new();
    CATALOG.get_or_init(|| {
        BUILTIN_SOURCES
            .iter()
            .map(|(name, src)| {
                let origin = PathBuf::from(format!("<builtin>/{name}.jinx"));
                let jinx = parse_jinx(src, &origin).expect("built-in jinx parses");
                assert_eq!(&jinx.name, name);
                (jinx.name.clone(), Arc::new(jinx))
            })
            .collect()
    })
}

pub fn builtin_jinx(name: &str) -> Option<Arc<JinxDef>> {
    builtin_catalog().get(name).cloned()
}

/// Zero-config team: one orchestrator holding the built-in tools.
pub fn bundled_team() -> Team {
    let base = Path::new("<bundled>");
    let context = parse_context(BUNDLED_CTX, &base.join("team.ctx")).expect("bundled context parses");
    let orchestrator =
        parse_npc(BUNDLED_ORCHESTRATOR, &base.join("orchestrator.npc")).expect("bundled npc parses");
    Team {
        name: "bundled".into(),
        path: base.to_path_buf(),
        context,
        npcs: BTreeMap::from([(orchestrator.name.clone(), orchestrator)]),
        jinx_catalog: BTreeMap::new(),
        sub_teams: BTreeMap::new(),
        warnings: Vec::new(),
    }
}
