use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use privlasso_harness::config::{ExperimentConfig, ExperimentKind};
use privlasso_harness::error::{HarnessError, Result};

/// Run a privlasso experiment from a TOML config.
#[derive(Debug, Parser)]
#[command(name = "privlasso", version)]
struct Cli {
    /// Experiment kind; must match `kind` in the config.
    #[arg(value_enum)]
    kind: ExperimentKind,
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Dotted `key=value` override, e.g. `params.lambda=1.5`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&cli.config, &cli.overrides)?;
    if cfg.kind != cli.kind {
        return Err(HarnessError::config(format!(
            "config describes `{}` but `{}` was requested",
            cfg.kind, cli.kind
        )));
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    cfg.validate()?;
    let files = privlasso_harness::execute(&cfg, &cfg.output_dir)?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
