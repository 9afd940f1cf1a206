//! Child processes with wall-clock limits and cooperative cancellation.
//!
//! Children are started in their own process group so a timeout or cancel
//! kills everything the command spawned, not just the immediate shell.

use std::io::{self, Read};
use std::os::unix::process::CommandExt;
use std::process::{Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, Instant};

const POLL: Duration = Duration::from_millis(5);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Termination {
    Exited(i32),
    Signaled,
    TimedOut,
    Cancelled,
}

#[derive(Debug, Clone)]
pub struct ProcessOutput {
    pub termination: Termination,
    pub stdout: String,
    pub stderr: String,
    pub elapsed: Duration,
}

impl ProcessOutput {
    pub fn success(&self) -> bool {
        self.termination == Termination::Exited(0)
    }

    pub fn exit_code(&self) -> Option<i32> {
        match self.termination {
            Termination::Exited(c) => Some(c),
            _ => None,
        }
    }
}

fn kill_group(pid: u32) {
    // SAFETY: plain syscall on a process group we created; failure is harmless.
    unsafe {
        libc::kill(-(pid as libc::pid_t), libc::SIGKILL);
    }
}

fn reader<R: Read + Send + 'static>(mut src: R) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = src.read_to_end(&mut buf);
        String::from_utf8_lossy(&buf).into_owned()
    })
}

fn status_to_termination(status: ExitStatus) -> Termination {
    match status.code() {
        Some(c) => Termination::Exited(c),
        None => Termination::Signaled,
    }
}

/// Run `cmd` to completion, killing its process group on timeout or cancel.
/// Spawn failures (e.g. program not found) are returned as `Err`.
pub fn run(
    mut cmd: Command,
    timeout: Option<Duration>,
    cancel: Option<&AtomicBool>,
) -> io::Result<ProcessOutput> {
    cmd.stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    let start = Instant::now();
    let mut child = cmd.spawn()?;
    let pid = child.id();
    let out = reader(child.stdout.take().expect("piped stdout"));
    let err = reader(child.stderr.take().expect("piped stderr"));

    let termination = loop {
        if let Some(status) = child.try_wait()? {
            break status_to_termination(status);
        }
        if timeout.is_some_and(|t| start.elapsed() >= t) {
            kill_group(pid);
            let _ = child.wait();
            break Termination::TimedOut;
        }
        if cancel.is_some_and(|c| c.load(Ordering::SeqCst)) {
            kill_group(pid);
            let _ = child.wait();
            break Termination::Cancelled;
        }
        thread::sleep(POLL);
    };
    // Grandchildren may still hold the pipes after the shell itself exits.
    kill_group(pid);
    let elapsed = start.elapsed();
    Ok(ProcessOutput {
        termination,
        stdout: out.join().unwrap_or_default(),
        stderr: err.join().unwrap_or_default(),
        elapsed,
    })
}

/// `sh -c <line>` convenience wrapper.
pub fn shell_command(line: &str) -> Command {
    let mut cmd = Command::new("sh");
    cmd.arg("-c").arg(line);
    cmd
}
