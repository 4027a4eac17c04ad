//! Command-line pipeline: ingest raw traces, fit and evaluate the predictor,
//! benchmark the solvers, generate synthetic traces and plan transmit power.
//!
//! Every command is a plain function over parsed arguments so tests can call
//! it without a subprocess. Outputs go to `--out-dir` together with a
//! `<command>.manifest.json` provenance record.

pub mod bench;
pub mod commands;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use surflink::estimator::EstimatorError;
use surflink::kalman::KalmanError;
use surflink::radio::RadioError;
use surflink::synth::SynthError;
use surflink::trace::TraceError;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0:#}")]
    Input(anyhow::Error),
    #[error("{0:#}")]
    Numerical(anyhow::Error),
    #[error("{0:#}")]
    Internal(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Internal(_) => 1,
        }
    }

    pub fn input(msg: impl std::fmt::Display) -> Self {
        CliError::Input(anyhow::anyhow!("{msg}"))
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        CliError::Input(e.into())
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        match e {
            EstimatorError::SingularSystem { .. } | EstimatorError::NonPositiveVariance(_) => {
                CliError::Numerical(e.into())
            }
            _ => CliError::Input(e.into()),
        }
    }
}

impl From<KalmanError> for CliError {
    fn from(e: KalmanError) -> Self {
        CliError::Input(e.into())
    }
}

impl From<RadioError> for CliError {
    fn from(e: RadioError) -> Self {
        CliError::Input(e.into())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Input(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "surflink", version, about = "RSSI prediction from wave motion")]
pub struct Cli {
    /// Seed for every random choice (GD random init, simulation noise).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory receiving all outputs.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Format of tabular outputs (predictions, power schedule, bench table).
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Align an IMU and an RSSI trace into a normalized series.
    Ingest(IngestArgs),
    /// Fit predictor coefficients to one or more series.
    Fit(FitArgs),
    /// Score coefficients on a series, optionally against a Kalman baseline.
    Eval(EvalArgs),
    /// Time the exact and gradient-descent solvers.
    Bench(BenchArgs),
    /// Generate a synthetic IMU + RSSI trace with known ground truth.
    Simulate(SimulateArgs),
    /// Plan per-packet transmit power from the predictions.
    Power(PowerArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct IngestArgs {
    /// IMU CSV (`t_ms,ax,ay,az[,gx,gy,gz]`).
    #[arg(long)]
    pub imu: PathBuf,
    /// RSSI CSV (`t_ms,rssi_dbm,seq[,tx_dbm]`).
    #[arg(long)]
    pub rssi: PathBuf,
    /// IMU downsampling window in samples; 1 keeps the IMU rate.
    #[arg(long, default_value_t = 1)]
    pub window: usize,
    /// Fractional overlap of consecutive windows, in [0, 1).
    #[arg(long, default_value_t = 0.0)]
    pub overlap: f64,
    /// Largest RSSI/IMU timestamp gap accepted when pairing.
    #[arg(long, default_value_t = surflink::trace::DEFAULT_TOLERANCE_MS)]
    pub tolerance_ms: i64,
    /// Replace every channel by its first difference before normalizing.
    #[arg(long)]
    pub differenced: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Exact,
    Gd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InitArg {
    Zero,
    Random,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    /// Series file from `ingest`; repeat to pool several traces.
    #[arg(long = "series", required = true)]
    pub series: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = Solver::Exact)]
    pub solver: Solver,
    /// Gradient-descent iteration budget.
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    /// Gradient-norm stopping tolerance.
    #[arg(long, default_value_t = 1e-12)]
    pub grad_tol: f64,
    /// Gradient-descent starting point.
    #[arg(long, value_enum, default_value_t = InitArg::Zero)]
    pub init: InitArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    None,
    Kalman,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub series: PathBuf,
    /// Coefficients JSON from `fit`.
    #[arg(long)]
    pub coefficients: PathBuf,
    #[arg(long, value_enum, default_value_t = Baseline::None)]
    pub baseline: Baseline,
    /// Leading fraction of the series used to calibrate the Kalman filter.
    #[arg(long, default_value_t = 0.5)]
    pub calib_fraction: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchArgs {
    /// System sizes m.
    #[arg(long, value_delimiter = ',', default_value = "4,16,32")]
    pub sizes: Vec<usize>,
    /// Gradient-descent iteration counts T.
    #[arg(long, value_delimiter = ',', default_value = "10,50,100,500,1000")]
    pub iters: Vec<usize>,
    /// Timed repetitions per cell; the median is reported.
    #[arg(long, default_value_t = 15)]
    pub reps: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    /// SynthConfig JSON.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in wave regime: southbeach or crandon.
    #[arg(long)]
    pub preset: Option<String>,
    /// Override the trace duration in seconds.
    #[arg(long)]
    pub duration_s: Option<f64>,
    /// Override the RSSI packet rate in Hz.
    #[arg(long)]
    pub rssi_rate_hz: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PowerArgs {
    #[arg(long)]
    pub coefficients: PathBuf,
    /// Normalized series from `ingest`.
    #[arg(long)]
    pub series: PathBuf,
    /// Built-in profile name (cc1200, cc2538) or a RadioProfile JSON file.
    #[arg(long, default_value = "cc2538")]
    pub radio: String,
    /// Receive threshold in dBm.
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: f64,
    /// Fade margin in dB added to the threshold.
    #[arg(long, default_value_t = surflink::radio::DEFAULT_MARGIN_DB)]
    pub margin: f64,
    /// Transmit power quantization step in dB.
    #[arg(long, default_value_t = surflink::radio::DEFAULT_TX_STEP_DB)]
    pub step: f64,
    /// Transmit power the series was recorded at; defaults to the radio maximum.
    #[arg(long, allow_hyphen_values = true)]
    pub reference_tx: Option<f64>,
}

/// Runs one parsed invocation; human-readable progress goes to stdout.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let ctx = commands::Context {
        seed: cli.seed,
        out_dir: cli.out_dir.clone(),
        format: cli.format,
    };
    match &cli.command {
        Command::Ingest(args) => {
            let s = commands::cmd_ingest(&ctx, args)?;
            println!("paired {} RSSI samples, dropped {}", s.paired, s.dropped);
        }
        Command::Fit(args) => {
            let s = commands::cmd_fit(&ctx, args)?;
            let c = s.coefficients;
            println!(
                "rho = {:.6}, alpha = ({:.6}, {:.6}, {:.6})",
                c.rho, c.alpha[0], c.alpha[1], c.alpha[2]
            );
        }
        Command::Eval(args) => {
            let s = commands::cmd_eval(&ctx, args)?;
            println!(
                "mmse rmse = {:.6} (accuracy {:.2}%)",
                s.mmse.rmse, s.mmse.accuracy_pct
            );
            if let Some(k) = s.kalman {
                println!(
                    "kalman rmse = {:.6} (accuracy {:.2}%)",
                    k.stats.rmse, k.stats.accuracy_pct
                );
            }
        }
        Command::Bench(args) => {
            let rows = bench::cmd_bench(&ctx, args)?;
            println!("timed {} cells", rows.len());
        }
        Command::Simulate(args) => {
            let s = commands::cmd_simulate(&ctx, args)?;
            println!("wrote {} IMU and {} RSSI samples", s.imu_samples, s.rssi_samples);
        }
        Command::Power(args) => {
            let s = commands::cmd_power(&ctx, args)?;
            println!(
                "threshold met on {:.1}% of steps (fixed {} dBm: {:.1}%)",
                100.0 * s.met_fraction,
                s.fixed_tx_dbm,
                100.0 * s.fixed_met_fraction
            );
        }
    }
    Ok(())
}
