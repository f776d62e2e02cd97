use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use teai_cli::pipeline::{exit_code, Options, Pipeline};

#[derive(Parser)]
#[command(name = "teai", version, about = "Task exposure to AI: ingest, score, index, analyze")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the O*NET tables and the employment file.
    Ingest(Common),
    /// Assess every task with the model ensemble.
    Score(Common),
    /// Aggregate task scores into occupation scores.
    Index(Common),
    /// Tertiles, correlations and regressions.
    Analyze(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, default_value = "teai.toml")]
    config: PathBuf,
    /// Use the deterministic offline transport instead of the model endpoints.
    #[arg(long)]
    mock: bool,
    /// Seed for --mock.
    #[arg(long)]
    seed: Option<u64>,
    /// Accept a two-model ensemble.
    #[arg(long)]
    allow_partial_ensemble: bool,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .init();

    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::Ingest(c) => ("ingest", c),
        Command::Score(c) => ("score", c),
        Command::Index(c) => ("index", c),
        Command::Analyze(c) => ("analyze", c),
    };
    let opts = Options {
        mock: common.mock,
        seed: common.seed,
        allow_partial_ensemble: common.allow_partial_ensemble,
    };
    let result = Pipeline::load(&common.config, opts).and_then(|p| match name {
        "ingest" => p.ingest(),
        "score" => p.score(),
        "index" => p.index(),
        _ => p.analyze(),
    });
    let code = exit_code(&result);
    match &result {
        Ok(status) => eprintln!("{name}: {status:?} (exit {code})"),
        Err(f) => eprintln!("{name} failed: {f}"),
    }
    ExitCode::from(code as u8)
}
