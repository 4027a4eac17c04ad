//! Linear MMSE prediction of RSSI from its previous value and the current
//! 3-axis acceleration:
//!
//! ```text
//! r̂[k] = ρ·r[k−1] + αx·ax[k] + αy·ay[k] + αz·az[k]
//! ```
//!
//! The optimal coefficients solve the normal equations `R = E·A`, where `R`
//! holds the correlations of `r[k]` with each regressor and `E` the
//! correlations among the regressors `(r[k−1], ax[k], ay[k], az[k])`. All
//! expectations are sample means over the lag-1 pairs of a series.

mod descent;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix};
use crate::trace::AlignedSeries;

pub use descent::{Descent, GdConfig, Init, NormalEquations, StopReason, DEFAULT_SEED, MIN_CURVATURE};

/// Condition estimate above which an exact solve is reported as ill-conditioned.
pub const ILL_CONDITIONED: f64 = 1e8;
/// How far below zero a theoretical MSE may fall before it is worth a warning.
pub const MSE_NEGATIVE_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("series has {len} samples; need at least 2")]
    SeriesTooShort { len: usize },
    #[error("correlation matrix is singular (pivot {pivot:e} in column {column})")]
    SingularSystem { column: usize, pivot: f64 },
    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("invalid solver config: {0}")]
    InvalidConfig(String),
    #[error("invalid correlation system: {0}")]
    InvalidSystem(String),
}

impl From<LinalgError> for EstimatorError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::Singular { column, pivot } => EstimatorError::SingularSystem { column, pivot },
            LinalgError::Dimension { n, len } => {
                EstimatorError::InvalidSystem(format!("dimension {n} vs {len}"))
            }
        }
    }
}

pub type Result<T> = std::result::Result<T, EstimatorError>;

/// Fitted model: `ρ` on the previous RSSI, `α` on the acceleration axes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "CoefficientsDoc", into = "CoefficientsDoc")]
pub struct Coefficients {
    pub rho: f64,
    pub alpha: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct CoefficientsDoc {
    rho: f64,
    alpha_x: f64,
    alpha_y: f64,
    alpha_z: f64,
}

impl From<CoefficientsDoc> for Coefficients {
    fn from(d: CoefficientsDoc) -> Self {
        Coefficients {
            rho: d.rho,
            alpha: [d.alpha_x, d.alpha_y, d.alpha_z],
        }
    }
}

impl From<Coefficients> for CoefficientsDoc {
    fn from(c: Coefficients) -> Self {
        CoefficientsDoc {
            rho: c.rho,
            alpha_x: c.alpha[0],
            alpha_y: c.alpha[1],
            alpha_z: c.alpha[2],
        }
    }
}

impl Coefficients {
    pub fn new(rho: f64, alpha: [f64; 3]) -> Self {
        Coefficients { rho, alpha }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Coefficients {
            rho: a[0],
            alpha: [a[1], a[2], a[3]],
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.rho, self.alpha[0], self.alpha[1], self.alpha[2]]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Coefficients) -> f64 {
        self.as_array()
            .iter()
            .zip(other.as_array())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// First and second moments of the series, over the same lag-1 pairs as the
/// correlations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SeriesMeans {
    /// `E[r(t)]`
    pub r: f64,
    /// `E[r(t−1)]`
    pub r_prev: f64,
    /// `E[a(t)]`
    pub accel: [f64; 3],
    /// `E[r²(t)]`
    pub r_sq: f64,
}

/// The normal equations `R = E·A`.
///
/// `target_corr` is `R = (R_r, R_x, R_y, R_z)` and `regressor_corr` is the
/// symmetric 4×4 `E` with rows and columns ordered `(r[k−1], ax, ay, az)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSystem {
    pub target_corr: [f64; 4],
    pub regressor_corr: [[f64; 4]; 4],
    /// Number of lag-1 pairs averaged.
    pub count: usize,
    pub means: SeriesMeans,
    /// Regressors that take part in the solve. A dropped acceleration axis
    /// gets coefficient 0.
    pub active: [bool; 4],
}

impl CorrelationSystem {
    /// A system given directly by its matrices. `E` must be exactly
    /// symmetric and every entry finite.
    pub fn from_parts(regressor_corr: [[f64; 4]; 4], target_corr: [f64; 4]) -> Result<Self> {
        let finite = regressor_corr
            .iter()
            .flatten()
            .chain(&target_corr)
            .all(|v| v.is_finite());
        if !finite {
            return Err(EstimatorError::InvalidSystem("non-finite entry".into()));
        }
        for i in 0..4 {
            for j in 0..i {
                if regressor_corr[i][j] != regressor_corr[j][i] {
                    return Err(EstimatorError::InvalidSystem(format!(
                        "E is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(CorrelationSystem {
            target_corr,
            regressor_corr,
            count: 0,
            means: SeriesMeans::default(),
            active: [true; 4],
        })
    }

    fn active_indices(&self) -> Vec<usize> {
        (0..4).filter(|&i| self.active[i]).collect()
    }

    /// `E` and `R` restricted to the active regressors.
    pub fn reduced(&self) -> (Matrix, Vec<f64>) {
        let idx = self.active_indices();
        let e = Matrix::from_fn(idx.len(), |i, j| self.regressor_corr[idx[i]][idx[j]]);
        let r = idx.iter().map(|&i| self.target_corr[i]).collect();
        (e, r)
    }

    fn expand(&self, reduced: &[f64]) -> Coefficients {
        let mut full = [0.0; 4];
        for (&i, &v) in self.active_indices().iter().zip(reduced) {
            full[i] = v;
        }
        Coefficients::from_array(full)
    }

    pub fn matrix(&self) -> Matrix {
        Matrix::from_rows(&self.regressor_corr)
    }

    /// `κ∞(E)` over the active regressors.
    pub fn condition_estimate(&self) -> Result<f64> {
        let (e, _) = self.reduced();
        Ok(linalg::condition_inf(&e)?)
    }

    /// `E·A − R`.
    pub fn residual(&self, coeffs: &Coefficients) -> [f64; 4] {
        let a = coeffs.as_array();
        let mut out = [0.0; 4];
        for (i, o) in out.iter_mut().enumerate() {
            *o = linalg::dot(&self.regressor_corr[i], &a) - self.target_corr[i];
        }
        out
    }
}

/// Running sums for one or more series; lag-1 pairs never span two series.
#[derive(Debug, Clone)]
pub struct CorrelationAccumulator {
    gram: [[f64; 4]; 4],
    cross: [f64; 4],
    sum_r: f64,
    sum_r_prev: f64,
    sum_a: [f64; 3],
    sum_r_sq: f64,
    count: usize,
    active: [bool; 4],
}

impl Default for CorrelationAccumulator {
    fn default() -> Self {
        CorrelationAccumulator {
            gram: [[0.0; 4]; 4],
            cross: [0.0; 4],
            sum_r: 0.0,
            sum_r_prev: 0.0,
            sum_a: [0.0; 3],
            sum_r_sq: 0.0,
            count: 0,
            active: [true; 4],
        }
    }
}

impl CorrelationAccumulator {
    pub fn add_series(&mut self, series: &AlignedSeries) {
        let r = series.rssi();
        let a = series.accel();
        for k in 1..series.len() {
            let x = [r[k - 1], a[k][0], a[k][1], a[k][2]];
            for i in 0..4 {
                self.cross[i] += r[k] * x[i];
                for j in i..4 {
                    self.gram[i][j] += x[i] * x[j];
                }
            }
            self.sum_r += r[k];
            self.sum_r_prev += r[k - 1];
            for (s, v) in self.sum_a.iter_mut().zip(a[k]) {
                *s += v;
            }
            self.sum_r_sq += r[k] * r[k];
        }
        self.count += series.len().saturating_sub(1);
        for (acc, on) in self.active.iter_mut().zip(series.active_channels()) {
            *acc &= on;
        }
    }

    pub fn finish(&self) -> Result<CorrelationSystem> {
        if self.count == 0 {
            return Err(EstimatorError::SeriesTooShort { len: self.count });
        }
        let n = self.count as f64;
        let mut e = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in i..4 {
                let v = self.gram[i][j] / n;
                e[i][j] = v;
                e[j][i] = v;
            }
        }
        Ok(CorrelationSystem {
            target_corr: self.cross.map(|v| v / n),
            regressor_corr: e,
            count: self.count,
            means: SeriesMeans {
                r: self.sum_r / n,
                r_prev: self.sum_r_prev / n,
                accel: self.sum_a.map(|v| v / n),
                r_sq: self.sum_r_sq / n,
            },
            active: self.active,
        })
    }
}

/// Sample correlations over the `N−1` lag-1 pairs `(r[k−1], a[k]) → r[k]`.
pub fn build_system(series: &AlignedSeries) -> Result<CorrelationSystem> {
    build_system_pooled(std::slice::from_ref(series))
}

/// Pools the lag-1 pairs of several series into one system.
pub fn build_system_pooled(series: &[AlignedSeries]) -> Result<CorrelationSystem> {
    let mut acc = CorrelationAccumulator::default();
    for s in series {
        if s.len() < 2 {
            return Err(EstimatorError::SeriesTooShort { len: s.len() });
        }
        acc.add_series(s);
    }
    acc.finish()
}

/// `A = E⁻¹R` by pivoted Gaussian elimination.
pub fn solve_exact(system: &CorrelationSystem) -> Result<Coefficients> {
    let (e, r) = system.reduced();
    if e.dim() == 0 {
        return Ok(Coefficients::default());
    }
    let (x, cond) = linalg::solve_with_condition(&e, &r)?;
    if cond > ILL_CONDITIONED {
        log::warn!("correlation matrix is ill-conditioned (κ∞ ≈ {cond:e})");
    }
    Ok(system.expand(&x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdReport {
    #[serde(flatten)]
    pub coefficients: Coefficients,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub objective_trace: Vec<f64>,
    pub gradient_norm_trace: Vec<f64>,
}

/// Gradient-descent solve of the normal equations.
pub fn solve_gd(system: &CorrelationSystem, config: &GdConfig) -> Result<GdReport> {
    if config.max_iters < 1 {
        return Err(EstimatorError::InvalidConfig("max_iters must be ≥ 1".into()));
    }
    if !(config.grad_tol >= 0.0) || !config.grad_tol.is_finite() {
        return Err(EstimatorError::InvalidConfig(format!(
            "grad_tol must be a non-negative number, got {}",
            config.grad_tol
        )));
    }
    let (e, r) = system.reduced();
    let init_full = config.initial_point(4);
    let init: Vec<f64> = (0..4)
        .filter(|&i| system.active[i])
        .map(|i| init_full[i])
        .collect();
    let descent = NormalEquations::new(&e, &r).descend(init, config.max_iters, config.grad_tol);
    Ok(GdReport {
        coefficients: system.expand(&descent.solution),
        iterations: descent.iterations,
        stop_reason: descent.stop,
        objective_trace: descent.objective,
        gradient_norm_trace: descent.gradient_norms,
    })
}

/// One-step prediction. Not clamped to `[0, 1]`.
pub fn predict(coeffs: &Coefficients, r_prev: f64, accel: [f64; 3]) -> f64 {
    coeffs.rho * r_prev + coeffs.alpha[0] * accel[0] + coeffs.alpha[1] * accel[1] + coeffs.alpha[2] * accel[2]
}

/// Error summary of a predictor on a series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean_error: f64,
    /// Mean square error `P`.
    #[serde(rename = "mse_P")]
    pub mse_p: f64,
    pub rmse: f64,
    /// `100·(1 − rmse)`, on the normalized scale.
    pub accuracy_pct: f64,
}

impl ErrorStats {
    /// Stats from residuals alone; `P` is the empirical mean square.
    pub fn from_residuals(residuals: &[f64]) -> ErrorStats {
        let n = residuals.len() as f64;
        let mean_error = residuals.iter().sum::<f64>() / n;
        let mse = residuals.iter().map(|e| e * e).sum::<f64>() / n;
        let rmse = mse.sqrt();
        ErrorStats {
            mean_error,
            mse_p: mse,
            rmse,
            accuracy_pct: accuracy_pct(rmse),
        }
    }
}

pub fn accuracy_pct(rmse: f64) -> f64 {
    100.0 * (1.0 - rmse)
}

/// Predictions and their error statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub stats: ErrorStats,
    /// `predicted[k−1]` is the prediction of `r[k]`, for `k = 1..N`.
    pub predicted: Vec<f64>,
}

/// One-step-ahead evaluation feeding the observed `r[k−1]`.
///
/// `rmse` comes from the residuals; `mean_error` and `P` come from the
/// series moments and correlations.
pub fn evaluate(coeffs: &Coefficients, series: &AlignedSeries) -> Result<Evaluation> {
    if series.len() < 2 {
        return Err(EstimatorError::SeriesTooShort { len: series.len() });
    }
    let r = series.rssi();
    let a = series.accel();
    let predicted: Vec<f64> = (1..series.len())
        .map(|k| predict(coeffs, r[k - 1], a[k]))
        .collect();
    let mse = predicted
        .iter()
        .zip(&r[1..])
        .map(|(p, y)| (y - p).powi(2))
        .sum::<f64>()
        / predicted.len() as f64;
    let rmse = mse.sqrt();
    let system = build_system(series)?;
    let theory = error_stats_theoretical(&system, coeffs, &system.means);
    Ok(Evaluation {
        stats: ErrorStats {
            mean_error: theory.mean_error,
            mse_p: theory.mse_p,
            rmse,
            accuracy_pct: accuracy_pct(rmse),
        },
        predicted,
    })
}

/// Error mean and mean square from moments:
///
/// ```text
/// E[e] = E[r(t)] − ρ·E[r(t−1)] − α·E[a(t)]
/// P    = E[r²(t)] − ρ·R_r − α·(R_x, R_y, R_z)
/// ```
///
/// `P` is the MSE only at the optimal coefficients, where the error is
/// orthogonal to the regressors. Small negative values from rounding are
/// clamped to zero.
pub fn error_stats_theoretical(
    system: &CorrelationSystem,
    coeffs: &Coefficients,
    means: &SeriesMeans,
) -> ErrorStats {
    let mean_error =
        means.r - coeffs.rho * means.r_prev - (0..3).map(|i| coeffs.alpha[i] * means.accel[i]).sum::<f64>();
    let a = coeffs.as_array();
    let raw_p = means.r_sq - linalg::dot(&a, &system.target_corr);
    if raw_p < -MSE_NEGATIVE_TOL {
        log::warn!("theoretical MSE is negative ({raw_p:e}); coefficients are not optimal for this system");
    }
    let mse_p = raw_p.max(0.0);
    let rmse = mse_p.sqrt();
    ErrorStats {
        mean_error,
        mse_p,
        rmse,
        accuracy_pct: accuracy_pct(rmse),
    }
}

/// Gaussian density of `r(t)` given `r(t−1)` and `a(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalDensity {
    pub mean: f64,
    pub variance: f64,
}

impl ConditionalDensity {
    pub fn pdf(&self, r: f64) -> f64 {
        let d = r - self.mean;
        (-d * d / (2.0 * self.variance)).exp() / (2.0 * std::f64::consts::PI * self.variance).sqrt()
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

pub fn conditional_density(
    coeffs: &Coefficients,
    p: f64,
    r_prev: f64,
    accel: [f64; 3],
) -> Result<ConditionalDensity> {
    if !(p > 0.0) || !p.is_finite() {
        return Err(EstimatorError::NonPositiveVariance(p));
    }
    Ok(ConditionalDensity {
        mean: predict(coeffs, r_prev, accel),
        variance: p,
    })
}
