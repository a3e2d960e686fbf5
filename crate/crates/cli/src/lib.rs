//! Config-driven commands for the two-stream pipeline.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use commands::train::Stream;
use commands::Context;
use config::RunConfig;
use error::{CliError, CliResult};
use output::{ensure_dir, now_ms, write_json, write_run_meta, OutputLock};

#[derive(Debug, Parser)]
#[command(name = "twostream", version, about = "Two-stream texture/shape recognition pipeline")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Render the synthetic shape-stream dataset.
    Synth,
    /// Prune outlying texture patches per class.
    Prune,
    /// Train one stream.
    Train {
        #[arg(long, value_enum)]
        stream: Stream,
    },
    /// Classification accuracy of both streams and their fusion.
    EvalCls,
    /// Propose, score, suppress and evaluate detections.
    DetectEval,
    /// False-positive diagnosis of an existing detections file.
    Diagnose {
        /// Defaults to the detect-eval output.
        #[arg(long)]
        detections: Option<PathBuf>,
    },
}

impl Command {
    pub fn dir_name(&self) -> String {
        match self {
            Command::Synth => "synth".into(),
            Command::Prune => "prune".into(),
            Command::Train { stream } => format!("train-{}", stream.name()),
            Command::EvalCls => "eval-cls".into(),
            Command::DetectEval => "detect-eval".into(),
            Command::Diagnose { .. } => "diagnose".into(),
        }
    }
}

fn build_context(cli: &Cli) -> CliResult<Context> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut config = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(o) = &cli.out {
        config.paths.output = Some(o.clone());
    }
    config.validate()?;
    let out = config
        .paths
        .output
        .clone()
        .ok_or_else(|| CliError::Config("no output directory: set paths.output or pass --out".into()))?;
    Ok(Context { config, out, jobs: cli.jobs })
}

fn dispatch(ctx: &Context, command: &Command) -> CliResult<Value> {
    match command {
        Command::Synth => commands::synth::run(ctx),
        Command::Prune => commands::prune::run(ctx),
        Command::Train { stream } => commands::train::run(ctx, *stream),
        Command::EvalCls => commands::eval_cls::run(ctx),
        Command::DetectEval => commands::detect_eval::run(ctx),
        Command::Diagnose { detections } => commands::diagnose::run(ctx, detections.clone()),
    }
}

/// Runs one command. On success `<out>/<command>/summary.json` holds the
/// result; on failure it records the error category when the directory is
/// writable.
pub fn run(cli: &Cli) -> CliResult<Value> {
    let started = now_ms();
    let ctx = build_context(cli)?;
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::Config("--jobs must be positive".into()));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let _lock = OutputLock::acquire(&ctx.out)?;
    let name = cli.command.dir_name();
    let dir = ctx.dir(&name);
    ensure_dir(&dir)?;
    match dispatch(&ctx, &cli.command) {
        Ok(result) => {
            let summary = json!({ "status": "ok", "command": name, "seed": ctx.config.seed, "result": result });
            write_json(&dir.join("summary.json"), &summary)?;
            write_run_meta(&dir, &name, ctx.config.seed, cli.jobs, started)?;
            Ok(summary)
        }
        Err(e) => {
            let summary = json!({
                "status": "error",
                "command": name,
                "category": e.category(),
                "message": e.to_string(),
            });
            let _ = write_json(&dir.join("summary.json"), &summary);
            Err(e)
        }
    }
}
