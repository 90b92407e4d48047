use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wbic_cli::config::{parse_policy, resolve, Diagnostic, Experiment, ExperimentFile, Overrides};
use wbic_cli::{render_plots, run_experiment, summary_table, CliError};

/// Whole-body control experiments for a wheel-legged robot carrying loads.
#[derive(Parser)]
#[command(name = "wbic", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenarios and write logs, figures and a summary.
    Run(RunArgs),
    /// Check a configuration without simulating.
    Validate(ConfigArgs),
    /// Re-render the figures of a run log.
    Plot {
        /// A `run.csv` written by `wbic run`.
        csv: PathBuf,
        /// Output directory; defaults to the directory of the CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario to run; repeat for several.
    #[arg(long = "scenario", value_name = "NAME")]
    scenarios: Vec<String>,
    /// Seed for sensor noise and terrain randomness.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Also run each scenario under this damping policy (`bang-bang` or a
    /// constant such as `100`).
    #[arg(long, value_name = "POLICY")]
    compare: Option<String>,
    /// Scenarios simulated in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn experiment(args: &ConfigArgs) -> Result<Experiment, CliError> {
    let file = match &args.config {
        Some(path) => ExperimentFile::load(path).map_err(|d| CliError::Config(vec![d]))?,
        None => ExperimentFile::default(),
    };
    let overrides = Overrides { scenarios: args.scenarios.clone(), seed: args.seed, out: args.out.clone() };
    resolve(&file, &overrides).map_err(CliError::Config)
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run(args) => {
            let compare = args
                .compare
                .as_deref()
                .map(parse_policy)
                .transpose()
                .map_err(|m| CliError::Config(vec![Diagnostic { field: "--compare".into(), message: m }]))?;
            let exp = experiment(&args.config)?;
            let rows = run_experiment(&exp, compare, args.jobs)?;
            print!("{}", summary_table(&rows));
            println!("wrote {}", exp.out.join("summary.csv").display());
        }
        Command::Validate(args) => {
            let exp = experiment(&args)?;
            let names: Vec<&str> = exp.runs.iter().map(|c| c.scenario.name()).collect();
            println!("configuration OK: {}", names.join(", "));
        }
        Command::Plot { csv, out } => {
            let out = out.unwrap_or_else(|| csv.parent().map(PathBuf::from).unwrap_or_default());
            for path in render_plots(&csv, &out)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("WBIC_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
