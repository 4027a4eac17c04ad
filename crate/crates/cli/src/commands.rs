//! The pipeline commands other than `bench`.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use surflink::estimator::{
    self, build_system_pooled, evaluate, predict, solve_exact, solve_gd, Coefficients, ErrorStats, GdConfig,
    GdReport, Init, DEFAULT_SEED,
};
use surflink::kalman::{self, KalmanParams};
use surflink::radio::{packet_received, select_tx_power, RadioProfile};
use surflink::synth::{self, SynthConfig};
use surflink::trace::{
    align, difference, downsample_imu, normalize, parse_imu_csv, parse_rssi_csv, write_imu_csv,
    write_rssi_csv, AlignedSeries, Channel, PreprocessParams,
};

use crate::output::{to_json_bytes, Run};
use crate::{
    Baseline, CliError, EvalArgs, FitArgs, Format, IngestArgs, InitArg, PowerArgs, SimulateArgs, Solver,
};

/// Global options shared by every command.
#[derive(Debug, Clone)]
pub struct Context {
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub format: Format,
}

fn read_json<T: DeserializeOwned>(run: &mut Run, path: &Path) -> Result<T, CliError> {
    let bytes = run.read_input(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Renders rows as CSV or as a JSON array, returning the file extension too.
fn table<T: Serialize>(rows: &[T], format: Format) -> Result<(&'static str, Vec<u8>), CliError> {
    match format {
        Format::Json => Ok(("json", to_json_bytes(rows)?)),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for row in rows {
                w.serialize(row).map_err(|e| CliError::Internal(e.into()))?;
            }
            let bytes = w
                .into_inner()
                .map_err(|e| CliError::Internal(anyhow::anyhow!("{e}")))?;
            Ok(("csv", bytes))
        }
    }
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct IngestSummary {
    pub paired: usize,
    pub dropped: usize,
    pub series: AlignedSeries,
    pub preprocess: PreprocessParams,
}

/// Parses both traces, downsamples the IMU stream, pairs the streams, and
/// writes `series.json` and `preprocess.json`.
pub fn cmd_ingest(ctx: &Context, args: &IngestArgs) -> Result<IngestSummary, CliError> {
    let mut run = Run::new("ingest", &ctx.out_dir);
    run.set_config(args)?;
    let imu_bytes = run.read_input(&args.imu)?;
    let rssi_bytes = run.read_input(&args.rssi)?;
    let imu = parse_imu_csv(imu_bytes.as_slice())?;
    let rssi = parse_rssi_csv(rssi_bytes.as_slice())?;

    let imu = downsample_imu(&imu, args.window, args.overlap)?;
    if imu.is_empty() {
        return Err(CliError::input(format!(
            "IMU trace is shorter than one window of {} samples",
            args.window
        )));
    }
    let alignment = align(&rssi, &imu, args.tolerance_ms)?;
    let series = if args.differenced {
        difference(&alignment.series)?
    } else {
        alignment.series
    };
    let (series, normalization) = normalize(&series)?;
    let preprocess = PreprocessParams {
        window: args.window,
        overlap: args.overlap,
        tolerance_ms: args.tolerance_ms,
        differenced: args.differenced,
        normalization,
    };
    run.stage_json("series.json", &series)?;
    run.stage_json("preprocess.json", &preprocess)?;
    run.commit()?;
    Ok(IngestSummary {
        paired: alignment.paired,
        dropped: alignment.dropped,
        series,
        preprocess,
    })
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub solver: Solver,
    #[serde(flatten)]
    pub coefficients: Coefficients,
    /// Lag-1 pairs pooled into the system.
    pub pairs: usize,
    /// `κ∞(E)` over the active regressors, when `E` is invertible.
    pub condition_estimate: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FitSummary {
    pub coefficients: Coefficients,
    pub report: FitReport,
    pub gd: Option<GdReport>,
}

/// Builds the pooled normal equations and solves them; writes
/// `coefficients.json` and, for gradient descent, `gd_report.json`.
pub fn cmd_fit(ctx: &Context, args: &FitArgs) -> Result<FitSummary, CliError> {
    let mut run = Run::new("fit", &ctx.out_dir);
    let seed = ctx.seed.unwrap_or(DEFAULT_SEED);
    run.set_config(&(args, seed))?;
    run.set_seed(seed);
    let mut series = Vec::with_capacity(args.series.len());
    for path in &args.series {
        series.push(read_json::<AlignedSeries>(&mut run, path)?);
    }
    let system = build_system_pooled(&series)?;
    let (coefficients, gd) = match args.solver {
        Solver::Exact => (solve_exact(&system)?, None),
        Solver::Gd => {
            let config = GdConfig {
                max_iters: args.iters,
                grad_tol: args.grad_tol,
                init: match args.init {
                    InitArg::Zero => Init::Zero,
                    InitArg::Random => Init::RandomUniform01,
                },
                rng_seed: seed,
            };
            let report = solve_gd(&system, &config)?;
            (report.coefficients, Some(report))
        }
    };
    if !coefficients.is_finite() {
        return Err(CliError::Numerical(anyhow::anyhow!(
            "solver produced non-finite coefficients {coefficients:?}"
        )));
    }
    let report = FitReport {
        solver: args.solver,
        coefficients,
        pairs: system.count,
        condition_estimate: system.condition_estimate().ok(),
    };
    run.stage_json("coefficients.json", &report)?;
    if let Some(gd) = &gd {
        run.stage_json("gd_report.json", gd)?;
    }
    run.commit()?;
    Ok(FitSummary {
        coefficients,
        report,
        gd,
    })
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KalmanReport {
    pub params: KalmanParams,
    pub stats: ErrorStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// Predicted samples, `N − 1`.
    pub predictions: usize,
    pub mmse: ErrorStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kalman: Option<KalmanReport>,
}

#[derive(Debug, Serialize)]
struct PredictionRow {
    t_ms: i64,
    rssi_actual: f64,
    mmse_pred: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    kalman_pred: Option<f64>,
}

/// One-step-ahead evaluation; writes `report.json` and a predictions table.
pub fn cmd_eval(ctx: &Context, args: &EvalArgs) -> Result<EvalReport, CliError> {
    let mut run = Run::new("eval", &ctx.out_dir);
    run.set_config(args)?;
    let series: AlignedSeries = read_json(&mut run, &args.series)?;
    let coefficients: Coefficients = read_json(&mut run, &args.coefficients)?;
    let evaluation = evaluate(&coefficients, &series)?;
    let kalman = match args.baseline {
        Baseline::None => None,
        Baseline::Kalman => {
            let params = kalman::calibrate(&series, args.calib_fraction)?;
            let filtered = kalman::filter_series(&series, &params)?;
            Some((params, filtered))
        }
    };
    let rows: Vec<PredictionRow> = (1..series.len())
        .map(|k| PredictionRow {
            t_ms: series.t_ms()[k],
            rssi_actual: series.rssi()[k],
            mmse_pred: evaluation.predicted[k - 1],
            kalman_pred: kalman.as_ref().map(|(_, f)| f.predicted[k - 1]),
        })
        .collect();
    let report = EvalReport {
        predictions: rows.len(),
        mmse: evaluation.stats,
        kalman: kalman.map(|(params, f)| KalmanReport {
            params,
            stats: f.stats,
        }),
    };
    let (ext, bytes) = table(&rows, ctx.format)?;
    run.stage_json("report.json", &report)?;
    run.stage(&format!("predictions.{ext}"), bytes);
    run.commit()?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct TruthDoc<'a> {
    true_coefficients: Coefficients,
    config: &'a SynthConfig,
}

#[derive(Debug, Clone)]
pub struct SimulateSummary {
    pub config: SynthConfig,
    pub imu_samples: usize,
    pub rssi_samples: usize,
    pub truth: Option<AlignedSeries>,
}

/// Writes `imu.csv`, `rssi.csv`, `truth.json` and, for the linear model,
/// `truth_series.json` with the series in model units. Trace files are
/// always CSV.
pub fn cmd_simulate(ctx: &Context, args: &SimulateArgs) -> Result<SimulateSummary, CliError> {
    let mut run = Run::new("simulate", &ctx.out_dir);
    let mut config = match (&args.config, &args.preset) {
        (Some(path), _) => read_json::<SynthConfig>(&mut run, path)?,
        (None, Some(name)) => SynthConfig::preset(name)?,
        (None, None) => SynthConfig::preset("southbeach")?,
    };
    if let Some(d) = args.duration_s {
        config.duration_s = d;
    }
    if let Some(rate) = args.rssi_rate_hz {
        config.rssi_rate_hz = rate;
    }
    if let Some(seed) = ctx.seed {
        config.seed = seed;
    }
    run.set_config(&config)?;
    run.set_seed(config.seed);
    let trace = synth::generate(&config)?;

    let mut imu_csv = Vec::new();
    write_imu_csv(&trace.imu, &mut imu_csv)?;
    let mut rssi_csv = Vec::new();
    write_rssi_csv(&trace.rssi, &mut rssi_csv)?;
    run.stage("imu.csv", imu_csv);
    run.stage("rssi.csv", rssi_csv);
    run.stage_json(
        "truth.json",
        &TruthDoc {
            true_coefficients: config.true_coefficients,
            config: &config,
        },
    )?;
    if let Some(truth) = &trace.truth {
        run.stage_json("truth_series.json", truth)?;
    }
    run.commit()?;
    Ok(SimulateSummary {
        imu_samples: trace.imu.len(),
        rssi_samples: trace.rssi.len(),
        truth: trace.truth,
        config,
    })
}

// ---------------------------------------------------------------------------
// power
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct ScheduleRow {
    t_ms: i64,
    predicted_rx_dbm: f64,
    tx_dbm: f64,
    feasible: bool,
    /// Recorded RSSI shifted to the scheduled transmit power.
    actual_rx_dbm: f64,
    met: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerSummary {
    pub radio: String,
    pub threshold_dbm: f64,
    pub margin_db: f64,
    pub reference_tx_dbm: f64,
    pub steps: usize,
    pub met_fraction: f64,
    pub feasible_fraction: f64,
    pub mean_tx_dbm: f64,
    /// Mid-range transmit power used as the fixed-power comparison.
    pub fixed_tx_dbm: f64,
    pub fixed_met_fraction: f64,
}

fn load_profile(run: &mut Run, name_or_path: &str) -> Result<RadioProfile, CliError> {
    let profile = match RadioProfile::builtin(name_or_path) {
        Ok(p) => p,
        Err(_) if Path::new(name_or_path).is_file() => read_json(run, Path::new(name_or_path))?,
        Err(e) => return Err(e.into()),
    };
    profile.validate()?;
    Ok(profile)
}

/// Picks a transmit power per step so the predicted receive level reaches
/// `threshold + margin`, then checks the schedule against the recorded RSSI.
///
/// The series is taken to be recorded at `reference_tx`; changing the
/// transmit power shifts the received level by the same number of dB.
pub fn cmd_power(ctx: &Context, args: &PowerArgs) -> Result<PowerSummary, CliError> {
    let mut run = Run::new("power", &ctx.out_dir);
    run.set_config(args)?;
    let coefficients: Coefficients = read_json(&mut run, &args.coefficients)?;
    let series: AlignedSeries = read_json(&mut run, &args.series)?;
    let profile = load_profile(&mut run, &args.radio)?;
    let Some(norm) = series.normalization() else {
        return Err(CliError::input("series is not normalized; run ingest first"));
    };
    if series.is_differenced() {
        return Err(CliError::input(
            "power planning needs a level series, not a differenced one",
        ));
    }
    if series.len() < 2 {
        return Err(estimator::EstimatorError::SeriesTooShort { len: series.len() }.into());
    }
    let reference = args.reference_tx.unwrap_or(profile.tx_max_dbm);
    let mid = 0.5 * (profile.tx_min_dbm + profile.tx_max_dbm);
    let fixed_tx = if args.step > 0.0 {
        ((mid / args.step).round() * args.step).clamp(profile.tx_min_dbm, profile.tx_max_dbm)
    } else {
        mid
    };

    let r = series.rssi();
    let a = series.accel();
    let mut rows = Vec::with_capacity(series.len() - 1);
    let mut fixed_met = 0usize;
    for k in 1..series.len() {
        let predicted = norm.denormalize(predict(&coefficients, r[k - 1], a[k]), Channel::Rssi);
        let decision = select_tx_power(
            predicted,
            reference,
            args.threshold,
            args.margin,
            args.step,
            &profile,
        )?;
        let recorded = norm.denormalize(r[k], Channel::Rssi);
        let actual = recorded + decision.tx_dbm - reference;
        if packet_received(recorded + fixed_tx - reference, &profile, Some(args.threshold)) {
            fixed_met += 1;
        }
        rows.push(ScheduleRow {
            t_ms: series.t_ms()[k],
            predicted_rx_dbm: predicted,
            tx_dbm: decision.tx_dbm,
            feasible: decision.feasible,
            actual_rx_dbm: actual,
            met: packet_received(actual, &profile, Some(args.threshold)),
        });
    }
    let n = rows.len() as f64;
    let summary = PowerSummary {
        radio: profile.name.clone(),
        threshold_dbm: args.threshold,
        margin_db: args.margin,
        reference_tx_dbm: reference,
        steps: rows.len(),
        met_fraction: rows.iter().filter(|r| r.met).count() as f64 / n,
        feasible_fraction: rows.iter().filter(|r| r.feasible).count() as f64 / n,
        mean_tx_dbm: rows.iter().map(|r| r.tx_dbm).sum::<f64>() / n,
        fixed_tx_dbm: fixed_tx,
        fixed_met_fraction: fixed_met as f64 / n,
    };
    let (ext, bytes) = table(&rows, ctx.format)?;
    run.stage(&format!("power_schedule.{ext}"), bytes);
    run.stage_json("power_summary.json", &summary)?;
    run.commit()?;
    Ok(summary)
}
