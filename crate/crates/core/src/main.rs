use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use drofair::cli::{self, AnalyticExample, Failure};
use drofair::dro::DualConstant;
use drofair::scenarios::ScenarioName;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "drofair", version, about = "Chi-square DRO and retention dynamics")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario from a JSON config and write trajectories and summaries.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Solve the chi-square DRO problem for a fixed loss vector.
    DroSolve {
        /// One loss per line.
        #[arg(long)]
        losses: PathBuf,
        /// Base weights, one per line.
        #[arg(long, conflicts_with = "uniform", required_unless_present = "uniform")]
        base: Option<PathBuf>,
        #[arg(long)]
        uniform: bool,
        #[arg(long)]
        alpha_min: f64,
        /// Use the conservative dual constant instead of the exact one.
        #[arg(long)]
        conservative: bool,
    },
    /// Stability of the ERM fixed point for a scenario or analytic example.
    Stability {
        #[arg(long, conflicts_with = "analytic", required_unless_present = "analytic")]
        scenario: Option<String>,
        #[arg(long)]
        analytic: Option<String>,
    },
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.into()))?;
    println!("{text}");
    Ok(())
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { config } => {
            let outcome = cli::cmd_run(&config)?;
            for path in outcome.written {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::DroSolve { losses, base, uniform: _, alpha_min, conservative } => {
            let convention = if conservative { DualConstant::Conservative } else { DualConstant::Exact };
            print_json(&cli::cmd_dro_solve(&losses, base.as_deref(), alpha_min, convention)?)
        }
        Command::Stability { scenario, analytic } => {
            let output = match (scenario, analytic) {
                (Some(name), _) => {
                    let name: ScenarioName = name.parse().map_err(Failure::Input)?;
                    cli::cmd_stability_scenario(name)?
                }
                (None, Some(example)) => {
                    let example: AnalyticExample = example.parse().map_err(Failure::Input)?;
                    cli::cmd_stability_analytic(example)?
                }
                (None, None) => unreachable!("clap requires one of --scenario or --analytic"),
            };
            print_json(&output)
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match dispatch(args.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code() as u8)
        }
    }
}
