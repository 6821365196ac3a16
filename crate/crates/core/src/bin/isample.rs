use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use isample::analysis::ReportOptions;
use isample::config::{parse_config, DEFAULT_CONFIG};
use isample::experiment::{analyze_dir, run_experiment, summary_csv};

#[derive(Parser)]
#[command(
    name = "isample",
    version,
    about = "Loss-based importance sampling experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (cell, seed) of a TOML experiment.
    Run { config: PathBuf },
    /// Rebuild summary.csv from the run CSVs in a directory.
    Analyze {
        dir: PathBuf,
        #[arg(long, default_value_t = 50)]
        window: usize,
        #[arg(long, default_value_t = 0.1)]
        loss_threshold: f64,
    },
    /// Print a commented default configuration.
    Gencfg,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Gencfg => {
            print!("{DEFAULT_CONFIG}");
            ExitCode::SUCCESS
        }
        Command::Run { config } => {
            let mut spec = match parse_config(&config) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            spec.apply_env_overrides();
            match run_experiment(&spec) {
                Ok(outcome) => {
                    for run in &outcome.runs {
                        match &run.error {
                            None => println!(
                                "ok      {} ({} iterations)",
                                run.path.display(),
                                run.iterations_completed
                            ),
                            Some(e) => println!(
                                "aborted {} after {} iterations: {e}",
                                run.path.display(),
                                run.iterations_completed
                            ),
                        }
                    }
                    println!("summary {}", outcome.summary_path.display());
                    if outcome.all_completed() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::FAILURE
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Analyze {
            dir,
            window,
            loss_threshold,
        } => {
            match analyze_dir(
                &dir,
                &ReportOptions {
                    window,
                    loss_threshold,
                },
            ) {
                Ok(summaries) => {
                    print!("{}", summary_csv(&summaries));
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
