use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde_json::Value as Json;

use super::{HarnessError, TaskResult};

pub const SCHEMA_VERSION: u64 = 1;

/// Append-only JSON-lines log; every record is flushed as soon as it is written
/// so a killed run keeps everything finished so far.
pub struct TraceLog {
    path: PathBuf,
    out: Mutex<BufWriter<File>>,
}

impl TraceLog {
    pub fn open(path: &Path) -> Result<TraceLog, HarnessError> {
        let io = |source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok(TraceLog {
            path: path.to_path_buf(),
            out: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, result: &TaskResult) -> Result<(), HarnessError> {
        let mut record = serde_json::to_value(result).expect("TaskResult serializes");
        if let Json::Object(map) = &mut record {
            map.insert("schema_version".into(), SCHEMA_VERSION.into());
        }
        let line = serde_json::to_string(&record).expect("json value serializes");
        let mut out = self.out.lock().unwrap_or_else(|e| e.into_inner());
        writeln!(out, "{line}")
            .and_then(|_| out.flush())
            .map_err(|source| HarnessError::Io {
                path: self.path.display().to_string(),
                source,
            })
    }
}

pub fn read_log(path: &Path) -> Result<Vec<TaskResult>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_log_str(&text, &path.display().to_string())
}

pub fn read_log_str(text: &str, origin: &str) -> Result<Vec<TaskResult>, HarnessError> {
    let mut results = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| HarnessError::BadRecord {
            origin: origin.to_string(),
            line: i + 1,
            message,
        };
        let mut value: Json = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let version = value
            .as_object_mut()
            .ok_or_else(|| bad("record is not an object".into()))?
            .remove("schema_version")
            .ok_or_else(|| bad("missing schema_version".into()))?;
        match version.as_u64() {
            Some(SCHEMA_VERSION) => {}
            Some(found) => return Err(HarnessError::SchemaVersion { found }),
            None => return Err(bad("schema_version is not an integer".into())),
        }
        results.push(serde_json::from_value(value).map_err(|e| bad(e.to_string()))?);
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench_harness::{AttemptTrace, Outcome};

    fn sample() -> TaskResult {
        TaskResult {
            task_id: "t".into(),
            category: "shell".into(),
            model: "m".into(),
            provider: "p".into(),
            attempts: vec![AttemptTrace {
                attempt_index: 1,
                tool_calls: 2,
                rejected_calls: 0,
                duration: 0.25,
                model_turns: 3,
                outcome: Outcome::Pass,
                feedback_given: None,
                verify_exit: Some(0),
                error: None,
            }],
            passed: true,
            first_attempt_pass: true,
            max_attempts: 5,
            call_mode: Some("prompted".into()),
            error: None,
        }
    }

    #[test]
    fn append_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/log.jsonl");
        let log = TraceLog::open(&path).unwrap();
        log.append(&sample()).unwrap();
        log.append(&sample()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().all(|l| l.contains("\"schema_version\":1")));
        assert_eq!(read_log(&path).unwrap(), vec![sample(), sample()]);
    }

    #[test]
    fn rejects_other_versions_and_garbage() {
        let line = serde_json::to_string(&sample()).unwrap();
        assert!(matches!(read_log_str(&line, "x"), Err(HarnessError::BadRecord { line: 1, .. })));
        let v2 = line.replacen('{', "{\"schema_version\":2,", 1);
        assert!(matches!(read_log_str(&v2, "x"), Err(HarnessError::SchemaVersion { found: 2 })));
        assert!(read_log_str("not json", "x").is_err());
    }
}
