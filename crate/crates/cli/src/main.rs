//! `qotsim` command line: data generation, arrival-model training and
//! evaluation, policy training, backtests and report tables.

mod commands;
mod error;
mod manifest;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "qotsim", version, about = "Inventory control with quantity-over-time arrivals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic world and a behavior order history.
    GenData(GenDataArgs),
    /// Train the generative arrivals model on a world's order history.
    TrainQot(TrainQotArgs),
    /// Score arrival forecasts on held-out orders against a lead-time baseline.
    EvalQot(EvalQotArgs),
    /// Train a neural policy by direct backpropagation through the simulator.
    TrainPolicy(TrainPolicyArgs),
    /// Evaluate policies on held-out periods and write the comparison report.
    Backtest(BacktestArgs),
    /// Regenerate report tables from a finished run directory.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    #[value(name = "replay_truth")]
    ReplayTruth,
    #[value(name = "genqot")]
    Genqot,
    #[value(name = "vlt_model")]
    VltModel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Behavior {
    #[value(name = "noisy-base-stock")]
    NoisyBaseStock,
    Random,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// World generator config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Policy that placed the historical orders.
    #[arg(long, value_enum, default_value_t = Behavior::NoisyBaseStock)]
    pub behavior: Behavior,
}

#[derive(Args, Debug)]
pub struct TrainQotArgs {
    /// Directory written by gen-data.
    #[arg(long)]
    pub world: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Orders placed before this period are used for training.
    #[arg(long)]
    pub train_until: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalQotArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub world: PathBuf,
    /// Comma-separated subset of crps,ql,calibration.
    #[arg(long, default_value = "crps,ql,calibration")]
    pub metrics: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sampled arrival sequences per order.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// First held-out period; defaults to the model's training cutoff.
    #[arg(long)]
    pub test_from: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainPolicyArgs {
    #[arg(long)]
    pub world: PathBuf,
    /// Simulator dynamics used for training.
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    /// Arrivals model bundle, required with `--mode genqot`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub train_until: Option<usize>,
    /// Policy name used in reports; defaults by mode.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Args, Debug)]
pub struct BacktestArgs {
    #[arg(long)]
    pub world: PathBuf,
    /// Comma-separated policies: `newsvendor` or the name of a directory
    /// under `--policy-dir` written by train-policy.
    #[arg(long)]
    pub policies: String,
    #[arg(long, default_value = ".")]
    pub policy_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::ReplayTruth)]
    pub mode: ModeArg,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Simulation seeds per product.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub test_from: Option<usize>,
    /// Policy scaled to 100; defaults to the first listed.
    #[arg(long)]
    pub baseline: Option<String>,
    #[arg(long, default_value_t = 2000)]
    pub resamples: usize,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Output directory of backtest or eval-qot.
    #[arg(long)]
    pub run: PathBuf,
    /// Defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub baseline: Option<String>,
    #[arg(long, default_value = "crps,ql,calibration")]
    pub metrics: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2000)]
    pub resamples: usize,
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("QOTSIM_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::usage(format!("QOTSIM_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::failed(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli, argv: &[String]) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::GenData(a) => commands::gen_data(&a, argv),
        Command::TrainQot(a) => commands::train_qot(&a, argv),
        Command::EvalQot(a) => commands::eval_qot(&a, argv),
        Command::TrainPolicy(a) => commands::train_policy(&a, argv),
        Command::Backtest(a) => commands::backtest(&a, argv),
        Command::Report(a) => commands::report(&a, argv),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli, &argv[1..]) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.code())
        }
    }
}
