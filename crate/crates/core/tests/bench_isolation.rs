use std::sync::Arc;

use npcsh_core::bench_harness::{
    read_log, run_suite, Agent, AgentTranscript, AttemptRequest, BenchConfig, BenchTask, TraceLog,
};
use npcsh_core::trace_analytics::summarize;

fn task(id: &str, category: &str, verify: &str) -> BenchTask {
    BenchTask {
        id: id.into(),
        category: category.into(),
        instruction: format!("task {id}"),
        verify_cmd: verify.into(),
        setup_cmd: None,
        timeout: None,
    }
}

#[test]
fn tasks_do_not_see_each_other() {
    // The first task drops a canary; the second passes only if it cannot see it.
    let tasks = vec![task("drop", "a", "test -f canary"), task("look", "b", "test ! -f canary")];
    let agent: Arc<dyn Agent> = Arc::new(|req: &AttemptRequest| {
        if req.task.id == "drop" {
            std::fs::write(req.workdir.join("canary"), "x").unwrap();
        }
        AgentTranscript::default()
    });
    let config = BenchConfig {
        workers: 2,
        ..BenchConfig::default()
    };
    let report = run_suite(&tasks, agent, &config, None);
    assert!(report.results.iter().all(|r| r.passed), "{:#?}", report.results);
    assert_eq!(report.summary.passed, 2);
}

#[test]
fn replayed_log_gives_the_same_summary() {
    let tasks: Vec<BenchTask> = (0..6)
        .map(|i| task(&format!("t{i}"), if i % 2 == 0 { "even" } else { "odd" }, "test -f ok"))
        .collect();
    let agent: Arc<dyn Agent> = Arc::new(|req: &AttemptRequest| {
        let n: usize = req.task.id[1..].parse().unwrap();
        if n % 3 != 0 && req.attempt_index >= n % 3 {
            std::fs::write(req.workdir.join("ok"), "").unwrap();
        }
        AgentTranscript {
            tool_calls: n,
            ..AgentTranscript::default()
        }
    });
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/log.jsonl");
    let log = TraceLog::open(&path).unwrap();
    let config = BenchConfig {
        model: "stub".into(),
        max_attempts: 3,
        ..BenchConfig::default()
    };
    let report = run_suite(&tasks, agent, &config, Some(&log));
    drop(log);

    let replay = read_log(&path).unwrap();
    assert_eq!(replay, report.results);
    let live = summarize(&report.results).unwrap();
    let offline = summarize(&replay).unwrap();
    assert_eq!(live, offline);
    assert_eq!(offline[0].score, 4);
    assert_eq!(offline[0].first_attempt_passes, 2);
}
