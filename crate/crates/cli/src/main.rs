use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nsfemdg_cli::commands::{self, Outcome};
use nsfemdg_cli::config::RunConfig;

/// Implicit FE/DG solver for isentropic compressible Navier–Stokes flow.
#[derive(Debug, Parser)]
#[command(name = "nsfemdg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Time-step a preset and write diagnostics CSV and VTK fields.
    Run(Common),
    /// Run the invariant suite on small meshes.
    Check(Common),
    /// Run a refinement study (`--study rates|cauchy|pdecay`).
    Study(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Configuration file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides as `--key value` pairs, one per configuration key.
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "--KEY VALUE"
    )]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let (common, kind) = match &cli.command {
        Command::Run(c) => (c, "run"),
        Command::Check(c) => (c, "check"),
        Command::Study(c) => (c, "study"),
    };

    if let Err(e) = commands::configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let cfg = match RunConfig::load(common.config.as_deref(), &common.overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    for w in &cfg.warnings {
        log::warn!("{w}");
    }

    let outcome = match kind {
        "run" => commands::cmd_run(&cfg),
        "check" => commands::cmd_check(&cfg),
        _ => commands::cmd_study(&cfg),
    };
    match outcome {
        Outcome::Success => ExitCode::SUCCESS,
        Outcome::ConfigError(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Outcome::NumericalFailure(msg) => {
            eprintln!("failure: {msg}");
            ExitCode::from(2)
        }
    }
}
