mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use output::Format;

#[derive(Parser)]
#[command(name = "pqs", version, about = "Homodyne-monitored decaying qubit: trajectories, smoothing and weak values")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// Master seed. Falls back to the config seed, then to 1.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Encoding of tabular outputs.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

/// Overrides for the physical and numerical parameters.
#[derive(Args, Clone, Default)]
pub struct ParamArgs {
    /// Decay rate, 1/us.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Detector efficiency.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Time step, us.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Record length, us.
    #[arg(long = "T")]
    pub horizon: Option<f64>,
    /// Post-selection fidelity.
    #[arg(long)]
    pub eta_p: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Classical conditional excitation probabilities on a time grid.
    Classical(commands::ClassicalArgs),
    /// Predicted and retrodicted mean signal over a sweep of preparations.
    Weakvalue(commands::WeakValueArgs),
    /// Ensemble of post-selected trajectories, or smoothing of a stored record.
    Trajectory(commands::TrajectoryArgs),
    /// Detector efficiency from |+x> and |-x> calibration runs.
    Calibrate(commands::CalibrateArgs),
}

pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<pqs_core::PqsError> for Failure {
    fn from(e: pqs_core::PqsError) -> Self {
        Failure::Runtime(e.into())
    }
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, Failure> {
    let common = cli.common;
    let pool = match common.threads {
        Some(0) => return Err(Failure::Usage("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    }
    .map_err(|e| Failure::Runtime(e.into()))?;
    pool.install(|| match cli.command {
        Command::Classical(a) => commands::classical(&common, &a),
        Command::Weakvalue(a) => commands::weakvalue(&common, &a),
        Command::Trajectory(a) => commands::trajectory(&common, &a),
        Command::Calibrate(a) => commands::calibrate(&common, &a),
    })
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
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
