use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vcl_cli::config::{list_profiles, load_config, profile, ExperimentConfig};
use vcl_cli::runner::{run_with_progress, Roots};
use vcl_cli::CliError;

/// Continual-learning experiments with Gaussian natural gradients and Stein coresets.
///
/// Relative dataset paths resolve against $VCL_DATA_ROOT and relative output
/// directories against $VCL_OUTPUT_ROOT when those are set.
#[derive(Parser)]
#[command(name = "vcl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a JSON config file or a built-in profile name.
    Run { config: PathBuf },
    /// Print the built-in profiles.
    ListProfiles,
    /// Check a config and print it with every default filled in.
    Validate { config: PathBuf },
    /// Print a built-in profile as a JSON config.
    ShowProfile { name: String },
}

fn resolve(arg: &Path) -> Result<ExperimentConfig, CliError> {
    if !arg.exists() {
        if let Some(p) = arg.to_str().and_then(profile) {
            return Ok(p.config());
        }
    }
    load_config(arg)
}

fn pretty(config: &ExperimentConfig) -> String {
    serde_json::to_string_pretty(config).expect("config serializes")
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config } => {
            let config = resolve(&config)?;
            let report =
                run_with_progress(&config, &Roots::from_env(), &mut |line| eprintln!("{line}"))?;
            println!(
                "wrote {} in {:.1} s",
                report.output_dir.display(),
                report.seconds
            );
        }
        Command::ListProfiles => print!("{}", list_profiles()),
        Command::Validate { config } => println!("{}", pretty(&resolve(&config)?)),
        Command::ShowProfile { name } => {
            let p = profile(&name).ok_or_else(|| CliError::Config {
                field: "profile".into(),
                message: format!("unknown profile `{name}`"),
            })?;
            println!("{}", pretty(&p.config()));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
