use std::path::Path;
use std::process::{Command, Output};

fn npcsh(dir: &Path, lines: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_npcsh"));
    cmd.arg("--workdir").arg(dir);
    for l in lines {
        cmd.arg("-c").arg(l);
    }
    cmd.output().unwrap()
}

fn bench(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_npcsh-bench"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn slash_commands_run_jinxes() {
    let dir = tempfile::tempdir().unwrap();
    let out = npcsh(dir.path(), &["/sh echo hi > note.txt", "/sh cat note.txt"]);
    assert!(out.status.success(), "{out:?}");
    assert_eq!(stdout(&out).trim(), "hi");
}

#[test]
fn unknown_jinx_fails_the_command() {
    let dir = tempfile::tempdir().unwrap();
    let out = npcsh(dir.path(), &["/definitely_not_a_jinx"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("definitely_not_a_jinx"));
}

#[test]
fn bench_run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("suite.yaml"),
        "name: tiny\ntasks:\n  - id: make-file\n    category: files\n    instruction: touch made\n    verify_cmd: test -f made\n  - id: impossible\n    category: files\n    instruction: \"true\"\n    verify_cmd: \"false\"\n",
    )
    .unwrap();
    let run = bench(
        dir.path(),
        &["run", "suite.yaml", "--model", "cmd", "--agent-cmd", "sh -c", "--max-attempts", "2", "--log", "log.jsonl"],
    );
    assert!(run.status.success(), "{run:?}");
    let text = stdout(&run);
    assert!(text.contains("1/2 passed"), "{text}");

    let report = bench(dir.path(), &["report", "log.jsonl", "--by-category", "--out-dir", "cols"]);
    assert!(report.status.success(), "{report:?}");
    let text = stdout(&report);
    assert!(text.contains("1/2 (50%)"), "{text}");
    assert!(dir.path().join("cols/models.tsv").exists());

    let missing = bench(dir.path(), &["report", "absent.jsonl"]);
    assert_eq!(missing.status.code(), Some(2));
}
