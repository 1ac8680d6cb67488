//! `guidedrl`: ingest -> features -> label -> tune -> generate -> train ->
//! backtest -> evaluate -> report, plus plot-data export.
//!
//! Exit codes: 0 on success, 1 when a pipeline stage fails, 2 on usage
//! errors (bad flags, unknown or malformed config keys).

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{RawConfig, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Pipeline { module: &'static str, message: String },
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Pipeline { module, message } => write!(f, "[{module}] {message}"),
        }
    }
}

/// Maps any displayable error to a pipeline failure tagged with `module`.
pub fn fail<E: std::fmt::Display>(module: &'static str) -> impl Fn(E) -> CliError {
    move |e| CliError::Pipeline {
        module,
        message: e.to_string(),
    }
}

#[derive(Debug, Parser)]
#[command(name = "guidedrl", version, about = "LLM-guided double-DQN trading pipelines")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Flat dotted-key JSON config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root that relative data and output paths resolve against.
    #[arg(long, global = true, default_value = ".")]
    workspace: PathBuf,
    /// Config override, `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true)]
    instrument: Option<String>,
    /// Guidance mode: off, dir_only, conf_dir or tau.
    #[arg(long, global = true)]
    tau: Option<String>,
    #[arg(long = "prompt-version", global = true)]
    prompt_version: Option<String>,
    /// stub, http or replay.
    #[arg(long, global = true)]
    backend: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Training worker threads (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Load and align OHLCV, macro series and news.
    Ingest,
    /// Compute technical indicators over the ingested bars.
    Features,
    /// Hindsight expert labels.
    Label,
    /// Writer/judge prompt refinement over sampled tuning windows.
    Tune {
        /// Stop after each repeat so the best prompt can be edited.
        #[arg(long)]
        pause: bool,
    },
    /// Monthly strategies and guidance signals for the train and OOS ranges.
    Generate,
    /// Multi-run DDQN training with OOS evaluation.
    Train,
    /// Replay trained checkpoints over the OOS range and export traces.
    Backtest,
    /// Per-condition statistics and paired tests for one instrument.
    Evaluate,
    /// Cross-instrument tables and token usage.
    Report,
    /// Tidy per-bar CSV for price/action/guidance overlays.
    Plotdata {
        #[arg(long)]
        run: Option<usize>,
    },
}

fn build_config(g: &GlobalArgs, cmd: Command) -> Result<RunConfig, CliError> {
    let mut raw = match &g.config {
        Some(p) => RawConfig::load(&resolve(&g.workspace, p))?,
        None => RawConfig::default(),
    };
    for s in &g.set {
        raw.set(s)?;
    }
    let flags = [
        ("instrument", g.instrument.clone()),
        ("tau", g.tau.clone()),
        ("prompt.version", g.prompt_version.clone()),
        ("backend", g.backend.clone()),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            raw.insert(k, serde_json::Value::String(v));
        }
    }
    if let Some(s) = g.seed {
        raw.insert("seed", s.into());
    }
    if let Some(w) = g.workers {
        raw.insert("workers", w.into());
    }
    match cmd {
        Command::Tune { pause: true } => raw.insert("tune.pause", true.into()),
        Command::Plotdata { run: Some(r) } => raw.insert("plot.run", r.into()),
        _ => {}
    }
    RunConfig::from_raw(raw)
}

pub fn resolve(root: &std::path::Path, p: &std::path::Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

fn run(cli: Cli) -> Result<String, CliError> {
    let cfg = build_config(&cli.global, cli.command)?;
    let ctx = commands::Context::new(cfg, cli.global.workspace.clone(), std::env::args().collect());
    match cli.command {
        Command::Ingest => commands::ingest(&ctx),
        Command::Features => commands::features(&ctx),
        Command::Label => commands::label(&ctx),
        Command::Tune { .. } => commands::tune(&ctx),
        Command::Generate => commands::generate(&ctx),
        Command::Train => commands::train(&ctx),
        Command::Backtest => commands::backtest(&ctx),
        Command::Evaluate => commands::evaluate(&ctx),
        Command::Report => commands::report(&ctx),
        Command::Plotdata { .. } => commands::plotdata(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e @ CliError::Usage(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}
