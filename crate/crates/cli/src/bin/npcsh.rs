//! Interactive shell over an agent team directory.

use std::io::{self, BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use clap::Parser;
use npcsh_core::cat_model::{bundled_team, load_team};
use npcsh_core::shell::{dispatch, ShellState};
use npcsh_core::team_orchestrator::Runtime;
use npcsh_core::ProviderRegistry;

#[derive(Parser, Debug)]
#[command(name = "npcsh", version, about = "Shell for declarative agent teams")]
struct Args {
    /// Team directory (a folder with a .ctx file); the bundled team when omitted.
    team: Option<PathBuf>,
    /// Model for every NPC, overriding NPC and context settings.
    #[arg(long)]
    model: Option<String>,
    /// Provider id for every NPC, overriding NPC and context settings.
    #[arg(long)]
    provider: Option<String>,
    /// YAML file of extra provider definitions.
    #[arg(long)]
    providers: Option<PathBuf>,
    /// Print each conversation's trace events (repeat for more logging).
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Run these lines instead of starting the interactive prompt.
    #[arg(short = 'c', long = "command")]
    commands: Vec<String>,
    /// Per-step wall-clock limit in seconds.
    #[arg(long)]
    step_timeout: Option<f64>,
    /// Working directory for tool execution (defaults to the current directory).
    #[arg(long)]
    workdir: Option<PathBuf>,
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 | 1 => "warn",
        2 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_env("NPCSH_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(io::stderr).init();
}

fn build_state(args: &Args, cancel: Arc<AtomicBool>) -> anyhow::Result<ShellState> {
    let team = match &args.team {
        Some(dir) => load_team(dir).with_context(|| format!("loading team {}", dir.display()))?,
        None => bundled_team(),
    };
    for w in &team.warnings {
        eprintln!("warning: {w}");
    }
    let mut providers = ProviderRegistry::from_env()?;
    if let Some(path) = &args.providers {
        providers.load_file(path)?;
    }
    let workdir = match &args.workdir {
        Some(w) => w.clone(),
        None => std::env::current_dir()?,
    };
    let mut runtime = Runtime::new(Arc::new(team), providers, workdir)
        .with_overrides(args.model.clone(), args.provider.clone());
    runtime.exec.cancel = Some(cancel);
    if let Some(secs) = args.step_timeout {
        runtime.exec.step_timeout = Some(Duration::from_secs_f64(secs));
    }
    let mut state = ShellState::new(runtime);
    state.verbosity = args.verbose;
    Ok(state)
}

/// Run one line, printing its output; returns whether it succeeded.
fn run_line(line: &str, state: &mut ShellState, cancel: &AtomicBool) -> bool {
    cancel.store(false, Ordering::SeqCst);
    let ok = match dispatch(line, state) {
        Ok(out) => {
            if !out.text.is_empty() {
                println!("{}", out.text);
            }
            out.success
        }
        Err(e) => {
            eprintln!("error: {e}");
            false
        }
    };
    if cancel.swap(false, Ordering::SeqCst) {
        eprintln!("(interrupted)");
    }
    ok
}

fn main() -> ExitCode {
    let args = Args::parse();
    init_logging(args.verbose);
    let cancel = Arc::new(AtomicBool::new(false));
    let handler_flag = cancel.clone();
    if let Err(e) = ctrlc::set_handler(move || handler_flag.store(true, Ordering::SeqCst)) {
        eprintln!("warning: cannot install Ctrl-C handler: {e}");
    }
    let mut state = match build_state(&args, cancel.clone()) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };

    if !args.commands.is_empty() {
        let all_ok = args.commands.iter().fold(true, |ok, c| run_line(c, &mut state, &cancel) && ok);
        return if all_ok { ExitCode::SUCCESS } else { ExitCode::FAILURE };
    }

    let stdin = io::stdin();
    let mut lines = stdin.lock().lines();
    loop {
        print!("{}", state.prompt());
        let _ = io::stdout().flush();
        match lines.next() {
            Some(Ok(line)) => {
                let trimmed = line.trim();
                if matches!(trimmed, "/exit" | "/quit") {
                    break;
                }
                run_line(trimmed, &mut state, &cancel);
            }
            Some(Err(e)) => {
                eprintln!("error: {e}");
                return ExitCode::FAILURE;
            }
            None => {
                println!();
                break;
            }
        }
    }
    ExitCode::SUCCESS
}
