use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thermofew_cli::{parse_config, presets, run, CliError, CliResult, Command, RunConfig};

#[derive(Parser)]
#[command(name = "thermofew", version, about = "Constrained few-particle dynamics and thermodynamics")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML run configuration.
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Shipped configuration, e.g. isokinetic-harmonic.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Overrides `ensemble.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Integrate one trajectory and write trajectory.csv and summary.json.
    Simulate,
    /// Run the enabled checks and write report.json.
    Verify,
    /// Evaluate the sweep points and write thermo.csv and thermo.json.
    Thermo,
    /// Run the ensemble and write ensemble.jsonl and ensemble.json.
    Sweep,
}

fn load(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            parse_config(&text)?
        }
        (None, Some(name)) => presets::load(name)?,
        (None, None) => return Err(CliError::config("config", "pass --config PATH or --preset NAME")),
    };
    if let Some(seed) = cli.seed {
        cfg.ensemble.seed = Some(seed);
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::Simulate => Command::Simulate,
        Cmd::Verify => Command::Verify,
        Cmd::Thermo => Command::Thermo,
        Cmd::Sweep => Command::Sweep,
    };
    let code = match load(&cli).and_then(|cfg| run(command, &cfg)) {
        Ok(outcome) => {
            println!("{}", serde_json::to_string(&outcome).expect("outcome serializes"));
            if outcome.exit_code != 0 {
                eprintln!("{}: finished with exit code {}", command.name(), outcome.exit_code);
            }
            outcome.exit_code
        }
        Err(e) => {
            println!("{}", e.envelope());
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
