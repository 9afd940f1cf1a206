//! Benchmark runner and trace-log reporting.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args as ClapArgs, Parser, Subcommand};
use npcsh_core::bench_harness::{
    load_suite, parse_suite, read_log, run_suite, Agent, BenchConfig, CommandAgent, NpcAgent, TraceLog, SEED_SUITE,
};
use npcsh_core::cat_model::{bundled_team, load_team};
use npcsh_core::trace_analytics::{
    category_table, correlation_table, parse_external_scores, predictors, retry_gains, score_table, summarize,
    write_columns,
};
use npcsh_core::ProviderRegistry;

#[derive(Parser, Debug)]
#[command(name = "npcsh-bench", version, about = "Run agent benchmark suites and analyse their traces")]
struct Cli {
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a suite and append one record per task to a trace log.
    Run(RunArgs),
    /// Summarise one or more trace logs.
    Report(ReportArgs),
}

#[derive(ClapArgs, Debug)]
struct RunArgs {
    /// Suite file, or `seed` for the bundled 13-task suite.
    suite: String,
    #[arg(long)]
    model: String,
    #[arg(long, default_value = "ollama")]
    provider: String,
    #[arg(long, default_value_t = 5)]
    max_attempts: usize,
    /// Seconds per attempt (or per task with --whole-task-budget).
    #[arg(long, default_value_t = 360.0)]
    timeout: f64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Start each retry from an empty conversation.
    #[arg(long)]
    fresh_context: bool,
    /// Let the timeout bound all attempts of a task together.
    #[arg(long)]
    whole_task_budget: bool,
    /// Trace log path (appended to).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Team directory driving the tasks; the bundled team when omitted.
    #[arg(long)]
    team: Option<PathBuf>,
    /// Send tasks to this NPC instead of routing through the orchestrator.
    #[arg(long)]
    npc: Option<String>,
    /// External agent command; receives the instruction as its last argument.
    #[arg(long, conflicts_with_all = ["team", "npc"])]
    agent_cmd: Option<String>,
    /// YAML file of extra provider definitions.
    #[arg(long)]
    providers: Option<PathBuf>,
    #[arg(long)]
    turn_budget: Option<usize>,
    /// Parent directory for per-task working directories.
    #[arg(long)]
    workdir_root: Option<PathBuf>,
}

#[derive(ClapArgs, Debug)]
struct ReportArgs {
    /// Trace logs; records from all of them are pooled.
    #[arg(required = true)]
    logs: Vec<PathBuf>,
    /// Two-column file of model and external benchmark score.
    #[arg(long)]
    external_scores: Option<PathBuf>,
    #[arg(long)]
    by_category: bool,
    #[arg(long)]
    correlations: bool,
    /// Also write tab-separated column files here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_env("NPCSH_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}

fn default_log_name(model: &str) -> PathBuf {
    let safe: String = model
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect();
    PathBuf::from(format!("bench-{safe}.jsonl"))
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let suite = if args.suite == "seed" {
        parse_suite(SEED_SUITE, "seed")?
    } else {
        load_suite(&PathBuf::from(&args.suite))?
    };
    if !(args.timeout.is_finite() && args.timeout > 0.0) {
        bail!("--timeout must be a positive number of seconds");
    }
    let agent: Arc<dyn Agent> = match &args.agent_cmd {
        Some(line) => Arc::new(CommandAgent::parse(line).context("--agent-cmd is empty or badly quoted")?),
        None => {
            let team = match &args.team {
                Some(dir) => load_team(dir).with_context(|| format!("loading team {}", dir.display()))?,
                None => bundled_team(),
            };
            let mut registry = ProviderRegistry::from_env()?;
            if let Some(path) = &args.providers {
                registry.load_file(path)?;
            }
            let mut agent = NpcAgent::with_registry(Arc::new(team), registry)
                .with_overrides(Some(args.model.clone()), Some(args.provider.clone()));
            if let Some(npc) = &args.npc {
                agent = agent.with_npc(npc.clone());
            }
            if let Some(b) = args.turn_budget {
                agent = agent.with_turn_budget(b);
            }
            Arc::new(agent)
        }
    };
    let config = BenchConfig {
        timeout: Duration::from_secs_f64(args.timeout),
        max_attempts: args.max_attempts,
        fresh_context: args.fresh_context,
        whole_task_budget: args.whole_task_budget,
        workers: args.workers,
        model: args.model.clone(),
        provider: args.provider.clone(),
        workdir_root: args.workdir_root.clone(),
        ..BenchConfig::default()
    };
    let log_path = args.log.clone().unwrap_or_else(|| default_log_name(&args.model));
    let log = TraceLog::open(&log_path)?;
    eprintln!(
        "running {} tasks from {} with {} via {} -> {}",
        suite.tasks.len(),
        suite.name.as_deref().unwrap_or(&args.suite),
        args.model,
        args.provider,
        log_path.display()
    );
    let report = run_suite(&suite.tasks, agent, &config, Some(&log));
    for r in &report.results {
        let last = r.attempts.last().map(|a| format!("{:?}", a.outcome).to_lowercase());
        println!(
            "{:<32} {:<12} {:<5} attempts={} tool_calls={} {}",
            r.task_id,
            r.category,
            if r.passed { "PASS" } else { "FAIL" },
            r.attempts.len(),
            r.tool_calls(),
            r.error.clone().or(last).unwrap_or_default()
        );
    }
    let s = &report.summary;
    println!("{}/{} passed", s.passed, s.total);
    for (category, t) in &s.per_category {
        println!("  {category:<14} {}/{}", t.passed, t.total);
    }
    Ok(())
}

fn report(args: ReportArgs) -> anyhow::Result<()> {
    let mut results = Vec::new();
    for path in &args.logs {
        results.extend(read_log(path)?);
    }
    let summaries = summarize(&results)?;
    print!("{}", score_table(&summaries));
    let gains = retry_gains(&results);
    if args.by_category {
        println!();
        print!("{}", category_table(&summaries, &gains));
    }
    let external = match &args.external_scores {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Some(parse_external_scores(&text)?)
        }
        None => None,
    };
    let preds = if args.correlations || external.is_some() {
        let p = predictors(&summaries, external.as_ref())?;
        println!();
        print!("{}", correlation_table(&p));
        Some(p)
    } else {
        None
    };
    if let Some(dir) = &args.out_dir {
        for path in write_columns(dir, &summaries, &gains, preds.as_deref())? {
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let outcome = match cli.command {
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
