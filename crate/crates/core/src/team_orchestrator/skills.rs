//! Section-level retrieval from heading-structured skill content.

use serde::Serialize;
use thiserror::Error;

use crate::cat_model::JinxDef;
use crate::jinx_engine::BuiltinEngine;

/// Reserved section name that returns the heading list.
pub const TOC: &str = "toc";

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SkillError {
    #[error("no section `{section}`; available: {}", available.join(", "))]
    UnknownSection { section: String, available: Vec<String> },
    #[error("`{name}` is not a skill (expected a single `static` step)")]
    NotASkill { name: String },
}

struct Heading<'a> {
    level: usize,
    text: &'a str,
    /// Byte offsets of the heading line and of the line after it.
    line_start: usize,
    body_start: usize,
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn parse_headings(content: &str) -> Vec<Heading<'_>> {
    let mut out = Vec::new();
    let mut offset = 0;
    let mut in_fence = false;
    for line in content.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let trimmed = line.trim_end_matches(['\n', '\r']);
        if trimmed.trim_start().starts_with("```") {
            in_fence = !in_fence;
            continue;
        }
        if in_fence {
            continue;
        }
        let level = trimmed.bytes().take_while(|b| *b == b'#').count();
        if !(1..=6).contains(&level) {
            continue;
        }
        let rest = &trimmed[level..];
        if !rest.is_empty() && !rest.starts_with([' ', '\t']) {
            continue;
        }
        let text = rest.trim().trim_end_matches('#').trim();
        if text.is_empty() {
            continue;
        }
        out.push(Heading {
            level,
            text,
            line_start: start,
            body_start: offset,
        });
    }
    out
}

/// Heading texts in document order.
pub fn headings(content: &str) -> Vec<String> {
    parse_headings(content).iter().map(|h| h.text.to_string()).collect()
}

/// Body under the first heading matching `section` (case- and
/// whitespace-insensitive), up to the next heading of the same or higher level.
pub fn select_section(content: &str, section: &str) -> Result<String, SkillError> {
    let hs = parse_headings(content);
    if normalize(section) == TOC {
        return Ok(hs.iter().map(|h| h.text).collect::<Vec<_>>().join("\n"));
    }
    let wanted = normalize(section);
    let idx = hs
        .iter()
        .position(|h| normalize(h.text) == wanted)
        .ok_or_else(|| SkillError::UnknownSection {
            section: section.to_string(),
            available: hs.iter().map(|h| h.text.to_string()).collect(),
        })?;
    let h = &hs[idx];
    let end = hs[idx + 1..]
        .iter()
        .find(|n| n.level <= h.level)
        .map(|n| n.line_start)
        .unwrap_or(content.len());
    Ok(content[h.body_start..end].trim_matches(['\n', '\r']).trim_end().to_string())
}

/// Section retrieval for a skill-form Jinx (one `static` step holding the content).
pub fn retrieve_skill_section(skill: &JinxDef, section: &str) -> Result<String, SkillError> {
    match skill.steps.as_slice() {
        [step] if BuiltinEngine::from_id(&step.engine) == Some(BuiltinEngine::Static) => select_section(&step.body, section),
        _ => Err(SkillError::NotASkill {
            name: skill.name.clone(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cat_model::parse_jinx;
    use std::path::Path;

    const DOC: &str = "# A\nalpha body\n\n## A.1\nnested\n# B\nbeta body\n```\n# not a heading\n```\n";

    #[test]
    fn selects_one_section() {
        assert_eq!(select_section(DOC, "B").unwrap(), "beta body\n```\n# not a heading\n```");
        assert_eq!(select_section(DOC, "  a ").unwrap(), "alpha body\n\n## A.1\nnested");
        assert_eq!(select_section(DOC, "a.1").unwrap(), "nested");
    }

    #[test]
    fn toc_and_unknown() {
        assert_eq!(select_section(DOC, "toc").unwrap(), "A\nA.1\nB");
        match select_section(DOC, "C") {
            Err(SkillError::UnknownSection { available, .. }) => assert_eq!(available, ["A", "A.1", "B"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn skill_jinx() {
        let src = "jinx_name: guide\ndescription: d\ninputs:\n  - name: section\nsteps:\n  - name: content\n    engine: static\n    code: |\n      # A\n      first\n      # B\n      second\n";
        let skill = parse_jinx(src, Path::new("guide.jinx")).unwrap();
        assert_eq!(retrieve_skill_section(&skill, "B").unwrap(), "second");
        let not = parse_jinx("jinx_name: x\ndescription: d\nsteps:\n  - {name: s, engine: sh, code: ls}\n", Path::new("x.jinx")).unwrap();
        assert!(matches!(retrieve_skill_section(&not, "A"), Err(SkillError::NotASkill { .. })));
    }
}
