//! `physiogan`: train, generate, evaluate, impute and plot.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod commands;
mod plots;
mod staging;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use physiogan::datasets::Scenario;
use physiogan::imputation::ImputeMethod;
use physiogan::metrics::Metric;
use physiogan::nets::ModelKind;

/// An invocation that cannot be carried out as requested.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Fails with a [`UsageError`].
macro_rules! usage {
    ($($arg:tt)*) => {
        return Err(anyhow::Error::new($crate::UsageError(format!($($arg)*))))
    };
}
pub(crate) use usage;

#[derive(Parser, Debug)]
#[command(name = "physiogan", version, about = "Conditional generative models for labeled time series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a generator or the oracle classifier.
    Train(TrainArgs),
    /// Sample a synthetic set from a generator checkpoint.
    Generate(GenerateArgs),
    /// Score a synthetic set against real data.
    Evaluate(EvaluateArgs),
    /// Corrupt test samples, repair them and score the repairs.
    Impute(ImputeArgs),
    /// Render per-class sample grids as SVG plus CSV.
    ExportPlots(ExportArgs),
    /// Write the sinusoid toy dataset.
    MakeToy(MakeToyArgs),
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: physiogan::Error| e.to_string())
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse().map_err(|e: physiogan::Error| e.to_string())
}

fn parse_rate(s: &str) -> Result<f64, String> {
    let rate: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..1.0).contains(&rate) {
        Ok(rate)
    } else {
        Err(format!("rate {rate} outside [0, 1)"))
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// physiogan, crnn, cvrae, rcgan, rcgan_ar or oracle.
    #[arg(long, value_parser = parse_kind)]
    pub model: ModelKind,
    /// TOML training config; defaults apply to absent keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LabelMode {
    Uniform,
    /// Training-set class frequencies.
    Match,
    /// Exactly balanced counts.
    Stratified,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub n: usize,
    /// Defaults to the training length.
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long, value_enum, default_value_t = LabelMode::Uniform)]
    pub labels: LabelMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub real: PathBuf,
    #[arg(long)]
    pub synthetic: PathBuf,
    /// Oracle checkpoint; required for the conditional score.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    /// Comma-separated subset of conditional, diversity, novelty, tstr.
    #[arg(long, value_delimiter = ',', value_parser = parse_metric, default_value = "conditional,diversity,novelty,tstr")]
    pub metrics: Vec<Metric>,
    /// TOML config for the TSTR classifiers.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seeds subsampling and TSTR training.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report JSON; the novelty histogram goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    Mcar,
    Segment,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Mcar => Scenario::Mcar,
            ScenarioArg::Segment => Scenario::Segment,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Physiogan,
    Knn,
}

impl From<MethodArg> for ImputeMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Physiogan => ImputeMethod::Physiogan,
            MethodArg::Knn => ImputeMethod::Knn,
        }
    }
}

#[derive(Args, Debug)]
pub struct ImputeArgs {
    /// Generator checkpoint with an encoder; required for `--method physiogan`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum)]
    pub scenario: ScenarioArg,
    #[arg(long, value_parser = parse_rate, default_value = "0.25")]
    pub rate: f64,
    #[arg(long, value_enum, default_value_t = MethodArg::Physiogan)]
    pub method: MethodArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Oracle checkpoint for the semantic repair score.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    /// Number of test samples to corrupt; all by default.
    #[arg(long)]
    pub count: Option<usize>,
    /// Neighbors for `--method knn`.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Number of triptych CSVs to write.
    #[arg(long, default_value_t = 3)]
    pub triptychs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// Dataset or synthetic-set directory.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Samples per class.
    #[arg(long, default_value_t = 3)]
    pub rows: usize,
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    pub split: SplitArg,
}

#[derive(Args, Debug)]
pub struct MakeToyArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub length: usize,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    #[arg(long, default_value_t = 200)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = 50)]
    pub test_per_class: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// Maximum per-sample phase offset in radians.
    #[arg(long, default_value_t = std::f64::consts::PI)]
    pub phase_jitter: f64,
    /// Per-sample relative amplitude spread, in [0, 1).
    #[arg(long, default_value_t = 0.3)]
    pub amplitude_jitter: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
