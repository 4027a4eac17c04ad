//! Scalar Kalman filter over the RSSI level alone, used as a history-only
//! baseline against the acceleration-aware predictor.
//!
//! The state is the RSSI level under a random-walk process model, so the
//! one-step prediction is the prior estimate.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::ErrorStats;
use crate::trace::AlignedSeries;

/// Lower bound for both noise variances.
pub const NOISE_FLOOR: f64 = 1e-8;
/// Minimum calibration prefix length.
pub const MIN_CALIBRATION_SAMPLES: usize = 10;
/// Width of the centered moving average used for calibration.
pub const SMOOTHING_WINDOW: usize = 5;
/// Scale applied to the residual variance so it estimates the white-noise
/// variance: a centered 5-point average leaves `(1 − 1/5)·σ²` in the residual.
const RESIDUAL_VARIANCE_GAIN: f64 = 1.25;

#[derive(Debug, Error)]
pub enum KalmanError {
    #[error("series has {len} samples; need at least {min}")]
    SeriesTooShort { len: usize, min: usize },
    #[error("calibration fraction must be in (0, 0.5], got {0}")]
    InvalidFraction(f64),
    #[error("invalid filter parameters: q = {q}, r_meas = {r_meas}")]
    InvalidParams { q: f64, r_meas: f64 },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, KalmanError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanParams {
    /// Process-noise variance.
    pub q: f64,
    /// Measurement-noise variance.
    pub r_meas: f64,
}

impl KalmanParams {
    pub fn validate(&self) -> Result<()> {
        if self.q >= 0.0 && self.q.is_finite() && self.r_meas > 0.0 && self.r_meas.is_finite() {
            Ok(())
        } else {
            Err(KalmanError::InvalidParams {
                q: self.q,
                r_meas: self.r_meas,
            })
        }
    }

    /// Positive root of `v² + q·v − q·r = 0`, the prior-free posterior
    /// variance the filter settles at. Written in the cancellation-free form
    /// `2qr / (q + √(q² + 4qr))`.
    pub fn steady_state_variance(&self) -> f64 {
        let (q, r) = (self.q, self.r_meas);
        if q == 0.0 {
            return 0.0;
        }
        2.0 * q * r / (q + (q * q + 4.0 * q * r).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanState {
    pub estimate: f64,
    pub variance: f64,
}

fn variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Estimates `q` and `r_meas` from the first `⌊N·fraction⌋` samples.
///
/// The prefix is split into a centered 5-point moving average and the
/// residual around it. `r_meas` is the residual variance rescaled for the
/// part of the noise the average absorbs; `q` is the mean square step of the
/// moving average, so slow drift counts towards it.
pub fn calibrate(series: &AlignedSeries, calib_fraction: f64) -> Result<KalmanParams> {
    if !(calib_fraction > 0.0 && calib_fraction <= 0.5) {
        return Err(KalmanError::InvalidFraction(calib_fraction));
    }
    let len = (series.len() as f64 * calib_fraction).floor() as usize;
    if len < MIN_CALIBRATION_SAMPLES {
        return Err(KalmanError::SeriesTooShort {
            len,
            min: MIN_CALIBRATION_SAMPLES,
        });
    }
    let prefix = &series.rssi()[..len];
    let half = SMOOTHING_WINDOW / 2;
    let smooth: Vec<f64> = prefix
        .windows(SMOOTHING_WINDOW)
        .map(|w| w.iter().sum::<f64>() / SMOOTHING_WINDOW as f64)
        .collect();
    let residual: Vec<f64> = smooth.iter().zip(&prefix[half..]).map(|(m, v)| v - m).collect();
    let r_meas = RESIDUAL_VARIANCE_GAIN * variance(&residual);
    let q = smooth.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / (smooth.len() - 1) as f64;
    Ok(KalmanParams {
        q: q.max(NOISE_FLOOR),
        r_meas: r_meas.max(NOISE_FLOOR),
    })
}

/// One predict/update cycle. Returns the updated state and the prediction
/// made before seeing `measurement`.
pub fn step(state: KalmanState, params: &KalmanParams, measurement: f64) -> (KalmanState, f64) {
    let prediction = state.estimate;
    let prior_var = state.variance + params.q;
    let gain = prior_var / (prior_var + params.r_meas);
    let next = KalmanState {
        estimate: prediction + gain * (measurement - prediction),
        variance: prior_var * (1.0 - gain),
    };
    (next, prediction)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanRun {
    pub stats: ErrorStats,
    /// `predicted[k−1]` is the prediction of `r[k]`, for `k = 1..N`.
    pub predicted: Vec<f64>,
    pub final_state: KalmanState,
}

/// Runs the filter from `(r[0], r_meas)` and scores the one-step-ahead
/// predictions for `k = 1..N`.
pub fn filter_series(series: &AlignedSeries, params: &KalmanParams) -> Result<KalmanRun> {
    params.validate()?;
    let r = series.rssi();
    if r.len() < 2 {
        return Err(KalmanError::SeriesTooShort { len: r.len(), min: 2 });
    }
    let mut state = KalmanState {
        estimate: r[0],
        variance: params.r_meas,
    };
    let mut predicted = Vec::with_capacity(r.len() - 1);
    for &m in &r[1..] {
        let (next, pred) = step(state, params, m);
        predicted.push(pred);
        state = next;
    }
    let residuals: Vec<f64> = r[1..].iter().zip(&predicted).map(|(y, p)| y - p).collect();
    Ok(KalmanRun {
        stats: ErrorStats::from_residuals(&residuals),
        predicted,
        final_state: state,
    })
}

/// Writes `t_ms,rssi_pred,rssi_actual` rows for `k = 1..N`.
pub fn write_predictions_csv<W: Write>(series: &AlignedSeries, predicted: &[f64], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["t_ms", "rssi_pred", "rssi_actual"])?;
    for ((t, p), y) in series.t_ms()[1..].iter().zip(predicted).zip(&series.rssi()[1..]) {
        w.write_record([t.to_string(), p.to_string(), y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn series(r: Vec<f64>) -> AlignedSeries {
        let n = r.len();
        AlignedSeries::new((0..n as i64).map(|k| 100 * k).collect(), r, vec![[0.0; 3]; n]).unwrap()
    }

    #[test]
    fn constant_series_hits_floors() {
        let p = calibrate(&series(vec![0.4; 100]), 0.5).unwrap();
        assert_eq!(
            p,
            KalmanParams {
                q: NOISE_FLOOR,
                r_meas: NOISE_FLOOR
            }
        );
    }

    #[test]
    fn short_prefix_rejected() {
        assert!(matches!(
            calibrate(&series(vec![0.4; 19]), 0.5),
            Err(KalmanError::SeriesTooShort { len: 9, .. })
        ));
        assert!(calibrate(&series(vec![0.4; 100]), 0.6).is_err());
        assert!(calibrate(&series(vec![0.4; 100]), 0.0).is_err());
    }

    #[test]
    fn white_noise_variance_recovered() {
        let sigma = 0.05;
        let normal = Normal::new(0.5, sigma).unwrap();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r: Vec<f64> = (0..2000).map(|_| normal.sample(&mut rng)).collect();
            let p = calibrate(&series(r), 0.5).unwrap();
            let rel = (p.r_meas - sigma * sigma).abs() / (sigma * sigma);
            assert!(rel < 0.2, "seed {seed}: {rel}");
        }
    }

    #[test]
    fn ramp_drift_shows_up_in_q() {
        let sigma = 0.02;
        let slope = 0.005;
        let normal = Normal::new(0.0, sigma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r: Vec<f64> = (0..2000)
            .map(|k| 0.1 + slope * (k % 1000) as f64 / 10.0 + normal.sample(&mut rng))
            .collect();
        let p = calibrate(&series(r), 0.5).unwrap();
        assert!((p.r_meas - sigma * sigma).abs() < 0.2 * sigma * sigma);
        // per-step drift is slope/10; the smoothed noise adds about σ²/12.5
        let drift = (slope / 10.0f64).powi(2);
        assert!(p.q > drift);
        let no_ramp: Vec<f64> = (0..2000).map(|_| 0.1 + normal.sample(&mut rng)).collect();
        let flat = calibrate(&series(no_ramp), 0.5).unwrap();
        assert!(p.q > flat.q);
    }

    #[test]
    fn huge_measurement_noise_ignores_measurement() {
        let params = KalmanParams {
            q: 1e-4,
            r_meas: 1e30,
        };
        let (next, pred) = step(
            KalmanState {
                estimate: 0.3,
                variance: 0.01,
            },
            &params,
            0.9,
        );
        assert_eq!(pred, 0.3);
        assert!((next.estimate - 0.3).abs() < 1e-25);
    }

    #[test]
    fn constant_measurements_keep_estimate() {
        let params = KalmanParams { q: 0.0, r_meas: 0.01 };
        let mut s = KalmanState {
            estimate: 0.6,
            variance: 0.01,
        };
        for _ in 0..50 {
            let prev = s.variance;
            s = step(s, &params, 0.6).0;
            assert_eq!(s.estimate, 0.6);
            assert!(s.variance < prev);
        }
    }

    fn quadratic_root(q: f64, r: f64) -> f64 {
        // textbook form, independent of the library's rearrangement
        (-q + (q * q + 4.0 * q * r).sqrt()) / 2.0
    }

    #[test]
    fn variance_converges_to_riccati_root() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let q = 10f64.powf(rng.random_range(-4.0..-1.0));
            let r = 10f64.powf(rng.random_range(-4.0..-1.0));
            let params = KalmanParams { q, r_meas: r };
            let mut s = KalmanState {
                estimate: 0.0,
                variance: r,
            };
            for _ in 0..1000 {
                s = step(s, &params, rng.random()).0;
            }
            let root = quadratic_root(q, r);
            assert!((s.variance - root).abs() < 1e-9, "q={q} r={r}");
            assert!((params.steady_state_variance() - root).abs() < 1e-12);
        }
    }

    #[test]
    fn variance_and_gain_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = KalmanParams {
            q: 1e-3,
            r_meas: 4e-3,
        };
        let mut s = KalmanState {
            estimate: 0.5,
            variance: 4e-3,
        };
        for _ in 0..500 {
            let prior = s.variance + params.q;
            let next = step(s, &params, rng.random()).0;
            assert!(next.variance > 0.0 && next.variance <= prior);
            let gain = prior / (prior + params.r_meas);
            assert!(gain > 0.0 && gain < 1.0);
            s = next;
        }
    }

    #[test]
    fn zero_process_noise_is_convex_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = KalmanParams { q: 0.0, r_meas: 0.02 };
        let init = KalmanState {
            estimate: 0.4,
            variance: 0.05,
        };
        let ms: Vec<f64> = (0..40).map(|_| rng.random()).collect();
        let mut s = init;
        // track weights on [init, m_1, …, m_n] alongside the filter
        let mut weights = vec![1.0];
        for &m in &ms {
            let prior = s.variance + params.q;
            let gain = prior / (prior + params.r_meas);
            for w in &mut weights {
                *w *= 1.0 - gain;
            }
            weights.push(gain);
            s = step(s, &params, m).0;
        }
        assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(weights.iter().all(|&w| w >= 0.0));
        let combo: f64 =
            weights[0] * init.estimate + weights[1..].iter().zip(&ms).map(|(w, m)| w * m).sum::<f64>();
        assert!((combo - s.estimate).abs() < 1e-12);
    }

    #[test]
    fn constant_series_has_zero_rmse() {
        let run = filter_series(
            &series(vec![0.7; 30]),
            &KalmanParams {
                q: 1e-4,
                r_meas: 1e-3,
            },
        )
        .unwrap();
        assert_eq!(run.stats.rmse, 0.0);
        assert_eq!(run.predicted.len(), 29);
    }

    #[test]
    fn prediction_csv_layout() {
        let s = series(vec![0.1, 0.2, 0.3]);
        let mut buf = Vec::new();
        write_predictions_csv(&s, &[0.1, 0.15], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "t_ms,rssi_pred,rssi_actual\n100,0.1,0.2\n200,0.15,0.3\n");
    }
}
