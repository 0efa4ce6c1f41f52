use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;
use streamline_recovery::cli::{cmd_plan, cmd_recover, cmd_solve_field, CliError};
use streamline_recovery::orchestrator::SearchStrategy;

#[derive(Parser)]
#[command(version, about = "Streamline recovery planning for quadrotor teams")]
struct Cli {
    /// Worker threads for the per-vehicle simulations (0 = all cores).
    #[arg(long, global = true, env = "RECOVERY_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Bisect,
    Incremental,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the stream field and write it with its contour polylines.
    SolveField {
        #[arg(long)]
        scenario: PathBuf,
        /// Field file; contours go next to it as `<stem>.contours.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Trace and fit every vehicle's reference at one speed.
    Plan {
        #[arg(long)]
        scenario: PathBuf,
        /// Common sliding speed, m/s.
        #[arg(long)]
        speed: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search for the fastest safe speed and write the flown trajectories.
    Recover {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "bisect")]
        strategy: Strategy,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| CliError::Input(e.to_string()))?;
    match cli.command {
        Command::SolveField { scenario, out } => {
            cmd_solve_field(&scenario, &out)?;
        }
        Command::Plan { scenario, speed, out } => {
            cmd_plan(&scenario, speed, out.as_deref())?;
        }
        Command::Recover {
            scenario,
            out,
            strategy,
        } => {
            let strategy = match strategy {
                Strategy::Bisect => SearchStrategy::Bisect,
                Strategy::Incremental => SearchStrategy::Incremental,
            };
            cmd_recover(&scenario, out.as_deref(), strategy)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
