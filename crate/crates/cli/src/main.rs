//! Experiment driver.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use tensortomo_cli::config::{Command, ConfigError};
use tensortomo_cli::runner::output_dir;
use tensortomo_cli::{run, validate_config, Invocation, RunError};

#[derive(Debug, Parser)]
#[command(name = "tensortomo", version, about = "Tensor tomography experiments on simple discs")]
struct Args {
    /// Experiment to run; must match the `experiment` key of the config.
    #[arg(value_parser = parse_command)]
    command: Command,
    /// Path to a `key = value` experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Size of the rayon thread pool.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides `ensemble.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_command(s: &str) -> Result<Command, String> {
    s.parse()
}

fn execute(args: &Args) -> anyhow::Result<Result<(), RunError>> {
    let text = fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let mut config = match validate_config(&text) {
        Ok(c) => c,
        Err(e) => return Ok(Err(e.into())),
    };
    if config.experiment != args.command {
        return Ok(Err(ConfigError::Range {
            key: "experiment".into(),
            message: format!("config is for `{}` but `{}` was requested", config.experiment, args.command),
        }
        .into()));
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
    }
    let out = output_dir(&config, args.out.as_deref());
    let invocation = Invocation { source: Some(text), threads: args.threads };
    Ok(run(&config, &out, &invocation).map(|outputs| {
        for f in &outputs.files {
            println!("{}", out.join(f).display());
        }
        println!("{}", out.join("manifest.txt").display());
    }))
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
