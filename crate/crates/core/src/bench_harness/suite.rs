use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// The shipped 13-category seed suite.
pub const SEED_SUITE: &str = include_str!("../../suites/seed.yaml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchTask {
    pub id: String,
    pub category: String,
    pub instruction: String,
    pub verify_cmd: String,
    #[serde(default)]
    pub setup_cmd: Option<String>,
    /// Seconds; overrides the run's timeout for this task.
    #[serde(default)]
    pub timeout: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Suite {
    #[serde(default)]
    pub name: Option<String>,
    pub tasks: Vec<BenchTask>,
}

impl Suite {
    /// Category labels in first-appearance order.
    pub fn categories(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.tasks
            .iter()
            .filter(|t| seen.insert(t.category.clone()))
            .map(|t| t.category.clone())
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<&BenchTask> {
        self.tasks.iter().find(|t| t.id == id)
    }
}

pub fn parse_suite(text: &str, origin: &str) -> Result<Suite, HarnessError> {
    let malformed = |message: String| HarnessError::MalformedSuite {
        origin: origin.to_string(),
        message,
    };
    if text.trim().is_empty() {
        return Err(malformed("empty suite file".into()));
    }
    let suite: Suite = serde_yaml::from_str(text).map_err(|e| malformed(e.to_string()))?;
    if suite.tasks.is_empty() {
        return Err(malformed("suite has no tasks".into()));
    }
    let mut ids = BTreeSet::new();
    for t in &suite.tasks {
        if t.id.trim().is_empty() {
            return Err(malformed("task with empty id".into()));
        }
        if !ids.insert(t.id.as_str()) {
            return Err(HarnessError::DuplicateTaskId { id: t.id.clone() });
        }
        if t.verify_cmd.trim().is_empty() {
            return Err(malformed(format!("task `{}` has an empty verify_cmd", t.id)));
        }
        if t.category.trim().is_empty() {
            return Err(malformed(format!("task `{}` has no category", t.id)));
        }
        if let Some(s) = t.timeout {
            if !(s.is_finite() && s > 0.0) {
                return Err(malformed(format!("task `{}` has a non-positive timeout", t.id)));
            }
        }
    }
    Ok(suite)
}

pub fn load_suite(path: &Path) -> Result<Suite, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_suite(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_suite_has_thirteen_categories() {
        let s = parse_suite(SEED_SUITE, "seed").unwrap();
        assert_eq!(s.tasks.len(), 13);
        assert_eq!(s.categories().len(), 13);
    }

    #[test]
    fn empty_and_duplicate() {
        assert!(matches!(parse_suite("", "e"), Err(HarnessError::MalformedSuite { .. })));
        assert!(matches!(parse_suite("tasks: []", "e"), Err(HarnessError::MalformedSuite { .. })));
        let dup = "tasks:\n  - {id: a, category: c, instruction: i, verify_cmd: 'true'}\n  - {id: a, category: c, instruction: i, verify_cmd: 'true'}\n";
        assert!(matches!(parse_suite(dup, "d"), Err(HarnessError::DuplicateTaskId { id }) if id == "a"));
        let empty_verify = "tasks:\n  - {id: a, category: c, instruction: i, verify_cmd: ''}\n";
        assert!(parse_suite(empty_verify, "v").is_err());
        let unknown = "tasks:\n  - {id: a, category: c, instruction: i, verify_cmd: 'true', colour: red}\n";
        assert!(parse_suite(unknown, "u").is_err());
    }
}
