use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, ValueEnum};
use kmwave_cli::{parse_config, run, CliError, Command};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Sub {
    Evolve,
    Reconstruct,
    Quantize,
    Verify,
}

/// Semiclassical wave propagation on discretized Lagrangian curves.
#[derive(Debug, Parser)]
#[command(name = "kmwave", version)]
struct Args {
    #[arg(value_enum)]
    command: Sub,
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `outputs.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Reject unknown configuration keys.
    #[arg(long, action = ArgAction::Set, default_value_t = true)]
    strict: bool,
}

fn execute(args: &Args) -> Result<serde_json::Value, CliError> {
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::validation("threads", e.to_string()))?;
    }
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.config.display())))?;
    let (config, warnings) = parse_config(&text, args.strict)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    let command = match args.command {
        Sub::Evolve => Command::Evolve,
        Sub::Reconstruct => Command::Reconstruct,
        Sub::Quantize => Command::Quantize,
        Sub::Verify => Command::Verify,
    };
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| config.outputs.dir.clone());
    let report = run(&config, command, &out)?;
    Ok(serde_json::to_value(report).expect("report serializes"))
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report).expect("json"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            println!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
