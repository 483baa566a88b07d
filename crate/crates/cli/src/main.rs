use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use resopt_cli::{calibrate, run, validate, CliError, RunConfig, DEFAULT_OUT_DIR};

#[derive(Parser)]
#[command(name = "resopt", version, about = "Value the option to invest in a commodity reserve")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate, solve and write boundary, surface and learning CSVs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Scenario to run; repeat for several. Runs all when omitted.
        #[arg(long = "scenario")]
        scenarios: Vec<String>,
        #[arg(long, env = "RESOPT_OUT_DIR")]
        out: Option<PathBuf>,
    },
    /// Cross-check every scenario against the Monte Carlo and lattice oracles.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "RESOPT_OUT_DIR")]
        out: Option<PathBuf>,
    },
    /// Print the calibration report of each scenario as JSON.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "scenario")]
        scenarios: Vec<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse().command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn execute(command: Command) -> Result<ExitCode, CliError> {
    match command {
        Command::Run { config, scenarios, out } => {
            let cfg = RunConfig::load(&config)?;
            for s in run(&cfg, &scenarios, out.as_deref())? {
                println!(
                    "{}: value {} at spot e^theta, mid-state; {} boundary points; written to {}",
                    s.scenario,
                    s.value_mid,
                    s.boundary_points,
                    s.directory.display()
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let out = out
                .or_else(|| cfg.scenarios[0].output_dir.clone())
                .unwrap_or_else(|| Path::new(DEFAULT_OUT_DIR).to_path_buf());
            let report = validate(&cfg, &out, None)?;
            for s in &report.scenarios {
                let failed = s.checks.iter().filter(|c| !c.passed).count();
                let verdict = if s.passed { "pass" } else { "FAIL" };
                println!("{}: {verdict} ({} checks, {failed} failed)", s.scenario, s.checks.len());
            }
            Ok(if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Calibrate { config, scenarios } => {
            let cfg = RunConfig::load(&config)?;
            let reports = calibrate(&cfg, &scenarios)?;
            println!("{}", serde_json::to_string_pretty(&reports).expect("reports serialise"));
            Ok(ExitCode::SUCCESS)
        }
    }
}
