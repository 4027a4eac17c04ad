//! Seeded synthetic traces: wave-like 3-axis acceleration and an RSSI series
//! driven by it, with the generating parameters known exactly.
//!
//! Two RSSI modes exist. `LinearModel` runs the lag-1 predictor forward as
//! the ground truth, so fitting must recover its coefficients. `PathLoss`
//! moves the node along the range axis by integrating acceleration and
//! evaluates the log-distance model, where the linear predictor is only an
//! approximation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::Coefficients;
use crate::radio::{self, PathLossParams};
use crate::trace::{AlignedSeries, ImuSample, RssiSample};

/// dBm value of normalized RSSI 0.
pub const DBM_FLOOR: f64 = -100.0;
/// dBm value of normalized RSSI 1.
pub const DBM_CEIL: f64 = -30.0;
pub const INITIAL_RSSI: f64 = 0.5;
const MAX_RATE_HZ: f64 = 1000.0;
/// ChaCha stream carrying the RSSI noise; motion noise uses stream 0.
const RSSI_STREAM: u64 = 1;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("unknown preset {0:?}; expected southbeach or crandon")]
    UnknownPreset(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Trace(#[from] crate::trace::TraceError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// One sinusoid, `amplitude[axis]·sin(2π·frequency_hz·t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveComponent {
    pub amplitude: [f64; 3],
    pub frequency_hz: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthMode {
    LinearModel,
    PathLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossSynth {
    pub params: PathLossParams,
    pub p_tx_dbm: f64,
    pub base_distance_m: f64,
    /// Constant velocity along the range axis, m/s.
    pub drift_velocity_mps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub duration_s: f64,
    #[serde(default = "default_rate")]
    pub imu_rate_hz: f64,
    #[serde(default = "default_rate")]
    pub rssi_rate_hz: f64,
    pub components: Vec<WaveComponent>,
    pub accel_noise_sigma: f64,
    pub true_coefficients: Coefficients,
    /// Standard deviation of the RSSI noise in normalized units.
    pub rssi_noise_sigma: f64,
    pub mode: SynthMode,
    #[serde(default)]
    pub pathloss: Option<PathLossSynth>,
    pub seed: u64,
}

fn default_rate() -> f64 {
    10.0
}

impl SynthConfig {
    /// Built-in wave regimes: `southbeach` has large, slow swell; `crandon`
    /// has smaller, faster chop.
    pub fn preset(name: &str) -> Result<Self> {
        let components = match name.to_ascii_lowercase().as_str() {
            "southbeach" => vec![
                WaveComponent {
                    amplitude: [0.8, 0.5, 0.3],
                    frequency_hz: 0.2,
                    phase: 0.0,
                },
                WaveComponent {
                    amplitude: [0.15, 0.3, 0.1],
                    frequency_hz: 0.35,
                    phase: 1.1,
                },
                WaveComponent {
                    amplitude: [0.05, 0.1, 0.3],
                    frequency_hz: 0.55,
                    phase: 2.3,
                },
            ],
            "crandon" => vec![
                WaveComponent {
                    amplitude: [0.4, 0.25, 0.15],
                    frequency_hz: 0.6,
                    phase: 0.0,
                },
                WaveComponent {
                    amplitude: [0.1, 0.2, 0.05],
                    frequency_hz: 0.9,
                    phase: 0.7,
                },
                WaveComponent {
                    amplitude: [0.05, 0.05, 0.2],
                    frequency_hz: 1.3,
                    phase: 1.9,
                },
            ],
            _ => return Err(SynthError::UnknownPreset(name.to_string())),
        };
        Ok(SynthConfig {
            duration_s: 60.0,
            imu_rate_hz: 10.0,
            rssi_rate_hz: 10.0,
            components,
            accel_noise_sigma: 0.05,
            true_coefficients: Coefficients::new(0.5, [0.2, 0.15, 0.1]),
            rssi_noise_sigma: 0.05,
            mode: SynthMode::LinearModel,
            pathloss: None,
            seed: 42,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SynthError::InvalidConfig(msg));
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return bad(format!("duration_s must be positive, got {}", self.duration_s));
        }
        for (name, rate) in [
            ("imu_rate_hz", self.imu_rate_hz),
            ("rssi_rate_hz", self.rssi_rate_hz),
        ] {
            if !(rate > 0.0 && rate <= MAX_RATE_HZ) {
                return bad(format!("{name} must be in (0, {MAX_RATE_HZ}], got {rate}"));
            }
        }
        for (name, sigma) in [
            ("accel_noise_sigma", self.accel_noise_sigma),
            ("rssi_noise_sigma", self.rssi_noise_sigma),
        ] {
            if !(sigma >= 0.0) || !sigma.is_finite() {
                return bad(format!("{name} must be non-negative, got {sigma}"));
            }
        }
        let finite_components = self.components.iter().all(|c| {
            c.amplitude.iter().all(|a| a.is_finite()) && c.frequency_hz.is_finite() && c.phase.is_finite()
        });
        if !finite_components {
            return bad("wave component has a non-finite field".into());
        }
        if !self.true_coefficients.is_finite() {
            return bad("true_coefficients must be finite".into());
        }
        if self.sample_count(self.imu_rate_hz) < 2 || self.sample_count(self.rssi_rate_hz) < 2 {
            return bad("duration too short for two samples".into());
        }
        if self.mode == SynthMode::PathLoss {
            let Some(pl) = &self.pathloss else {
                return bad("path_loss mode needs a pathloss section".into());
            };
            if !(pl.base_distance_m > 0.0) || !pl.base_distance_m.is_finite() {
                return bad(format!(
                    "base_distance_m must be positive, got {}",
                    pl.base_distance_m
                ));
            }
            if !(pl.params.exponent > 0.0)
                || ![pl.params.k_db, pl.p_tx_dbm, pl.drift_velocity_mps]
                    .iter()
                    .all(|v| v.is_finite())
            {
                return bad("pathloss parameters must be finite with a positive exponent".into());
            }
        }
        Ok(())
    }

    fn sample_count(&self, rate_hz: f64) -> usize {
        (self.duration_s * rate_hz).round() as usize
    }
}

fn time_ms(k: usize, rate_hz: f64) -> i64 {
    (k as f64 * 1000.0 / rate_hz).round() as i64
}

/// Sum of the wave components plus Gaussian noise per axis, sampled at
/// `imu_rate_hz` for `round(duration·rate)` samples.
pub fn generate_motion(config: &SynthConfig) -> Result<Vec<ImuSample>> {
    config.validate()?;
    let n = config.sample_count(config.imu_rate_hz);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.accel_noise_sigma).expect("sigma validated");
    let tau = 2.0 * std::f64::consts::PI;
    let samples = (0..n)
        .map(|k| {
            let t = k as f64 / config.imu_rate_hz;
            let mut accel = [0.0; 3];
            for c in &config.components {
                let s = (tau * c.frequency_hz * t + c.phase).sin();
                for (v, amp) in accel.iter_mut().zip(c.amplitude) {
                    *v += amp * s;
                }
            }
            if config.accel_noise_sigma > 0.0 {
                for v in &mut accel {
                    *v += noise.sample(&mut rng);
                }
            }
            ImuSample {
                t_ms: time_ms(k, config.imu_rate_hz),
                accel,
                gyro: None,
            }
        })
        .collect();
    Ok(samples)
}

/// Per-axis min/max scaling of the whole motion trace; a constant axis maps
/// to 0.
fn normalized_accel(motion: &[ImuSample]) -> Vec<[f64; 3]> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for s in motion {
        for i in 0..3 {
            lo[i] = lo[i].min(s.accel[i]);
            hi[i] = hi[i].max(s.accel[i]);
        }
    }
    motion
        .iter()
        .map(|s| {
            let mut a = [0.0; 3];
            for i in 0..3 {
                if hi[i] > lo[i] {
                    a[i] = (s.accel[i] - lo[i]) / (hi[i] - lo[i]);
                }
            }
            a
        })
        .collect()
}

/// Index of the motion sample nearest to RSSI sample `j`.
fn motion_index(j: usize, config: &SynthConfig, motion_len: usize) -> usize {
    let t = j as f64 / config.rssi_rate_hz;
    ((t * config.imu_rate_hz).round() as usize).min(motion_len - 1)
}

pub fn to_dbm(r: f64) -> f64 {
    DBM_FLOOR + (DBM_CEIL - DBM_FLOOR) * r
}

fn rssi_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(RSSI_STREAM);
    rng
}

/// RSSI produced by the linear model itself.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTrace {
    pub rssi: Vec<RssiSample>,
    /// The series in model units: `r` on the normalized scale and the
    /// normalized acceleration that drove it.
    pub truth: AlignedSeries,
}

/// Runs `r[k] = ρ·r[k−1] + α·a[k] + noise` forward from `r[0] = 0.5`,
/// where `a` is the min/max-normalized motion, and maps `r` affinely onto
/// `[−100, −30]` dBm.
pub fn generate_rssi_linear(config: &SynthConfig, motion: &[ImuSample]) -> Result<LinearTrace> {
    config.validate()?;
    if config.mode != SynthMode::LinearModel {
        return Err(SynthError::InvalidConfig("mode is not linear_model".into()));
    }
    if motion.is_empty() {
        return Err(SynthError::InvalidConfig("motion trace is empty".into()));
    }
    let accel_n = normalized_accel(motion);
    let n = config.sample_count(config.rssi_rate_hz);
    let mut rng = rssi_rng(config.seed);
    let noise = Normal::new(0.0, config.rssi_noise_sigma).expect("sigma validated");
    let c = &config.true_coefficients;

    let mut t_ms = Vec::with_capacity(n);
    let mut r = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    for j in 0..n {
        let ak = accel_n[motion_index(j, config, motion.len())];
        let value = if j == 0 {
            INITIAL_RSSI
        } else {
            let mut v = crate::estimator::predict(c, r[j - 1], ak);
            if config.rssi_noise_sigma > 0.0 {
                v += noise.sample(&mut rng);
            }
            v
        };
        t_ms.push(time_ms(j, config.rssi_rate_hz));
        r.push(value);
        a.push(ak);
    }
    let rssi = t_ms
        .iter()
        .zip(&r)
        .enumerate()
        .map(|(j, (&t, &v))| RssiSample {
            t_ms: t,
            rssi_dbm: to_dbm(v),
            seq: j as u64,
            tx_dbm: None,
        })
        .collect();
    Ok(LinearTrace {
        rssi,
        truth: AlignedSeries::new(t_ms, r, a)?,
    })
}

/// Range-axis displacement from trapezoidal double integration of the x
/// acceleration, starting at rest.
pub fn integrate_displacement(motion: &[ImuSample]) -> Vec<f64> {
    let mut x = Vec::with_capacity(motion.len());
    let mut v = 0.0;
    let mut pos = 0.0;
    x.push(0.0);
    for w in motion.windows(2) {
        let dt = (w[1].t_ms - w[0].t_ms) as f64 / 1000.0;
        let v_next = v + 0.5 * (w[0].accel[0] + w[1].accel[0]) * dt;
        pos += 0.5 * (v + v_next) * dt;
        v = v_next;
        x.push(pos);
    }
    x
}

/// RSSI from the log-distance model as the node moves. Generation stops
/// with a warning at the first sample whose distance is not positive.
pub fn generate_rssi_pathloss(config: &SynthConfig, motion: &[ImuSample]) -> Result<Vec<RssiSample>> {
    config.validate()?;
    let Some(pl) = config.pathloss.filter(|_| config.mode == SynthMode::PathLoss) else {
        return Err(SynthError::InvalidConfig("mode is not path_loss".into()));
    };
    if motion.is_empty() {
        return Err(SynthError::InvalidConfig("motion trace is empty".into()));
    }
    let displacement = integrate_displacement(motion);
    let n = config.sample_count(config.rssi_rate_hz);
    let mut rng = rssi_rng(config.seed);
    let sigma_db = config.rssi_noise_sigma * (DBM_CEIL - DBM_FLOOR);
    let noise = Normal::new(0.0, sigma_db).expect("sigma validated");
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let t = j as f64 / config.rssi_rate_hz;
        let d = pl.base_distance_m
            + displacement[motion_index(j, config, motion.len())]
            + pl.drift_velocity_mps * t;
        let p_rx = match radio::received_power(&pl.params, pl.p_tx_dbm, d) {
            Ok(p) => p,
            Err(_) => {
                log::warn!("distance reached {d:.3} m at t = {t:.3} s; truncating trace after {j} samples");
                break;
            }
        };
        let p_rx = if sigma_db > 0.0 {
            p_rx + noise.sample(&mut rng)
        } else {
            p_rx
        };
        out.push(RssiSample {
            t_ms: time_ms(j, config.rssi_rate_hz),
            rssi_dbm: p_rx,
            seq: j as u64,
            tx_dbm: Some(pl.p_tx_dbm),
        });
    }
    Ok(out)
}

/// Motion plus RSSI for either mode.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTrace {
    pub imu: Vec<ImuSample>,
    pub rssi: Vec<RssiSample>,
    /// Model-unit series, `LinearModel` only.
    pub truth: Option<AlignedSeries>,
}

pub fn generate(config: &SynthConfig) -> Result<SynthTrace> {
    let imu = generate_motion(config)?;
    match config.mode {
        SynthMode::LinearModel => {
            let LinearTrace { rssi, truth } = generate_rssi_linear(config, &imu)?;
            Ok(SynthTrace {
                imu,
                rssi,
                truth: Some(truth),
            })
        }
        SynthMode::PathLoss => {
            let rssi = generate_rssi_pathloss(config, &imu)?;
            Ok(SynthTrace {
                imu,
                rssi,
                truth: None,
            })
        }
    }
}
