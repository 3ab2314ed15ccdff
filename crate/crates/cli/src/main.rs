//! `dtf`: operator command line for the maintenance twin.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "dtf", version, about = "Predictive-maintenance digital twin pipeline")]
pub struct Cli {
    /// Pipeline config JSON. Flags override its values.
    #[arg(long, global = true, env = "DT_CONFIG")]
    config: Option<PathBuf>,
    /// Machine-readable JSON output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Label a sensor-matrix CSV with per-sensor failure flags, E and intervene.
    Label(LabelArgs),
    /// Compare the model zoo with k-fold CV, tune the best model, save it.
    Train(TrainArgs),
    /// Run rules over a fact file and print the alerts.
    Infer(InferArgs),
    /// Stream a CSV as readings to stdout, an HTTP service or an MQTT broker.
    Replay(ReplayArgs),
    /// Run the full pipeline with the HTTP API.
    Serve(ServeArgs),
}

#[derive(Args)]
pub struct LabelArgs {
    pub csv: PathBuf,
    #[arg(long)]
    pub specs: Option<PathBuf>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub z: Option<f64>,
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Output file; stdout when absent.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    pub csv: PathBuf,
    #[arg(long)]
    pub target: Option<String>,
    /// Number of CV folds.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Tuning objective: accuracy, f1, recall or precision.
    #[arg(long, default_value = "accuracy")]
    pub objective: String,
    /// Artifact path; `<models_dir>/<name>.model.json` when absent.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value = "best")]
    pub name: String,
    /// Balance classes by undersampling the majority.
    #[arg(long)]
    pub undersample: bool,
    /// Drop rows with any |z| above this; 0 disables.
    #[arg(long, default_value_t = 3.0)]
    pub outlier_z: f64,
    /// Keep the K most informative features.
    #[arg(long)]
    pub select: Option<usize>,
}

#[derive(Args)]
pub struct InferArgs {
    /// Rule files; the built-in rule sets when omitted.
    #[arg(long)]
    pub rules: Vec<PathBuf>,
    /// JSON-lines fact file.
    #[arg(long)]
    pub facts: PathBuf,
    /// Competency query to answer after inference.
    #[arg(long)]
    pub query: Option<String>,
    /// Query parameters as a JSON object.
    #[arg(long, default_value = "{}")]
    pub params: String,
}

#[derive(Args)]
pub struct ReplayArgs {
    pub csv: PathBuf,
    /// `max` or a time multiplier.
    #[arg(long, default_value = "max")]
    pub speed: String,
    /// `http://host:port` of a running `dtf serve`, or `mqtt://host:port`.
    #[arg(long)]
    pub target: Option<String>,
}

#[derive(Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
    #[arg(long)]
    pub models_dir: Option<PathBuf>,
    #[arg(long)]
    pub broker: Option<String>,
    #[arg(long)]
    pub specs: Option<PathBuf>,
    #[arg(long)]
    pub routes: Option<PathBuf>,
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub debounce: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
}

/// Errors carry their exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Serve(_)) { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default_level)),
        )
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
