#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod output;
mod svg;

use clap::Parser;
use commands::Verb;
use error::CliError;
use output::OutDir;
use std::path::PathBuf;
use std::process::ExitCode;

/// Batch experiments for abelian vortex solving and gluing.
#[derive(Debug, Parser)]
#[command(name = "vlab", version)]
struct Args {
    #[arg(value_enum)]
    verb: Verb,
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Omit timestamps so repeated runs produce identical files.
    #[arg(long)]
    deterministic: bool,
    /// Worker threads; `VLAB_THREADS` caps this further.
    #[arg(long)]
    parallel: Option<usize>,
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    let env = match std::env::var("VLAB_THREADS") {
        Ok(s) => Some(s.trim().parse::<usize>().map_err(|_| CliError::Validation(format!("VLAB_THREADS = `{s}` is not a count")))?),
        Err(_) => None,
    };
    let n = match (flag, env) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    };
    if n == Some(0) {
        return Err(CliError::Validation("thread count must be at least 1".into()));
    }
    Ok(n)
}

fn run(args: Args) -> Result<String, CliError> {
    let cfg = config::load(&args.config)?.resolved();
    let plan = commands::plan(args.verb, &cfg)?;
    if let Some(n) = thread_count(args.parallel)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
    }
    let dir = args
        .out
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| CliError::Validation("no output directory: pass --out or set output_dir".into()))?;
    let out = OutDir::create(dir, args.deterministic)?;
    out.write("config.resolved.toml", cfg.to_toml()?.as_bytes())?;
    commands::execute(plan, &out)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("vlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
