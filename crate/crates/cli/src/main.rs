use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use parabolic_ocp_cli::{parse_config_str, run, Command};

#[derive(Parser)]
#[command(name = "parabolic-ocp", version, about = "Bang-bang parabolic optimal control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Solve the control problem and write u, y, p and sigma.
    Solve(Common),
    /// Solve, then run the diagnostics section (all diagnostics if absent).
    Diagnose(Common),
    /// Solve, then run the perturbation harness.
    Smsr(Common),
    /// Solve, then run every section present in the config.
    All(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Defaults to `output_dir` from the config, else `./out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    match try_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn try_main() -> anyhow::Result<bool> {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Sub::Solve(a) => (Command::Solve, a),
        Sub::Diagnose(a) => (Command::Diagnose, a),
        Sub::Smsr(a) => (Command::Smsr, a),
        Sub::All(a) => (Command::All, a),
    };
    if let Some(n) = args.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let config = parse_config_str(&text, args.seed)?;
    let out = args
        .out
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let manifest = run(&config, command, &out)?;
    for c in &manifest.checks {
        println!("{:<28} {}  {}", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail);
    }
    println!("wrote {} files to {}", manifest.files.len() + 1, out.display());
    Ok(manifest.passed)
}
