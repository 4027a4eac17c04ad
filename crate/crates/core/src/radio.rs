//! Link budget: log-distance path loss, radio profiles and transmit-power
//! selection against a receive threshold.
//!
//! In dB the received power is `P_rx = K + P_tx − 10·n·log10(d)`; with
//! `n = 2` this is free-space inverse-square loss folded into the constant
//! `K` for antenna gains and apertures.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_EXPONENT: f64 = 2.0;
pub const DEFAULT_MARGIN_DB: f64 = 3.0;
pub const DEFAULT_TX_STEP_DB: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum RadioError {
    #[error("distance must be positive, got {0} m")]
    NonPositiveDistance(f64),
    #[error("threshold {threshold} dBm is below the radio sensitivity {sensitivity} dBm")]
    ThresholdBelowSensitivity { threshold: f64, sensitivity: f64 },
    #[error("path-loss exponent must be positive, got {0}")]
    InvalidExponent(f64),
    #[error("invalid radio profile {name}: {reason}")]
    InvalidProfile { name: String, reason: String },
    #[error("unknown radio profile {0:?}")]
    UnknownProfile(String),
}

pub type Result<T> = std::result::Result<T, RadioError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioProfile {
    pub name: String,
    pub sensitivity_dbm: f64,
    pub tx_min_dbm: f64,
    pub tx_max_dbm: f64,
    pub band: String,
    /// Sustainable packet rate, packets per second.
    pub rate_pps: f64,
}

impl RadioProfile {
    /// TI CC1200, sub-GHz.
    pub fn cc1200() -> Self {
        RadioProfile {
            name: "cc1200".into(),
            sensitivity_dbm: -123.0,
            tx_min_dbm: -16.0,
            tx_max_dbm: 16.0,
            band: "868 MHz".into(),
            rate_pps: 2.0,
        }
    }

    /// TI CC2538, 2.4 GHz IEEE 802.15.4.
    pub fn cc2538() -> Self {
        RadioProfile {
            name: "cc2538".into(),
            sensitivity_dbm: -97.0,
            tx_min_dbm: -24.0,
            tx_max_dbm: 7.0,
            band: "2.4 GHz".into(),
            rate_pps: 10.0,
        }
    }

    pub fn builtin(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "cc1200" => Ok(Self::cc1200()),
            "cc2538" => Ok(Self::cc2538()),
            _ => Err(RadioError::UnknownProfile(name.to_string())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| {
            Err(RadioError::InvalidProfile {
                name: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        let values = [
            self.sensitivity_dbm,
            self.tx_min_dbm,
            self.tx_max_dbm,
            self.rate_pps,
        ];
        if values.iter().any(|v| !v.is_finite()) {
            return bad("non-finite field");
        }
        if self.tx_min_dbm > self.tx_max_dbm {
            return bad("tx_min_dbm exceeds tx_max_dbm");
        }
        if self.sensitivity_dbm >= self.tx_min_dbm {
            return bad("sensitivity must lie below tx_min_dbm");
        }
        if self.rate_pps <= 0.0 {
            return bad("rate_pps must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossParams {
    pub k_db: f64,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
}

fn default_exponent() -> f64 {
    DEFAULT_EXPONENT
}

impl PathLossParams {
    pub fn new(k_db: f64, exponent: f64) -> Result<Self> {
        if !(exponent > 0.0) || !exponent.is_finite() {
            return Err(RadioError::InvalidExponent(exponent));
        }
        Ok(PathLossParams { k_db, exponent })
    }

    /// `K` as a linear power ratio.
    pub fn k_linear(&self) -> f64 {
        10f64.powf(self.k_db / 10.0)
    }
}

fn check_distance(d: f64) -> Result<()> {
    if d > 0.0 && d.is_finite() {
        Ok(())
    } else {
        Err(RadioError::NonPositiveDistance(d))
    }
}

/// Solves for `K` from one measurement at a known power and distance.
pub fn calibrate_k(
    p_tx_dbm: f64,
    distance_m: f64,
    p_rx_observed_dbm: f64,
    exponent: f64,
) -> Result<PathLossParams> {
    check_distance(distance_m)?;
    PathLossParams::new(
        p_rx_observed_dbm - p_tx_dbm + 10.0 * exponent * distance_m.log10(),
        exponent,
    )
}

pub fn received_power(params: &PathLossParams, p_tx_dbm: f64, distance_m: f64) -> Result<f64> {
    check_distance(distance_m)?;
    Ok(params.k_db + p_tx_dbm - 10.0 * params.exponent * distance_m.log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TxDecision {
    pub tx_dbm: f64,
    /// Whether the unclamped request fit under `tx_max_dbm`.
    pub feasible: bool,
}

/// Transmit power needed to bring the predicted receive level up to
/// `threshold + margin`, quantized up to a multiple of `step_db` and clamped
/// to the radio range.
pub fn select_tx_power(
    predicted_rx_dbm: f64,
    current_tx_dbm: f64,
    threshold_dbm: f64,
    margin_db: f64,
    step_db: f64,
    profile: &RadioProfile,
) -> Result<TxDecision> {
    if threshold_dbm < profile.sensitivity_dbm {
        return Err(RadioError::ThresholdBelowSensitivity {
            threshold: threshold_dbm,
            sensitivity: profile.sensitivity_dbm,
        });
    }
    let required_gain = threshold_dbm + margin_db - predicted_rx_dbm;
    let raw = current_tx_dbm + required_gain;
    // a hair of slack so values already on the grid are not bumped up by rounding noise
    let quantized = if step_db > 0.0 {
        (raw / step_db - 1e-9).ceil() * step_db
    } else {
        raw
    };
    Ok(TxDecision {
        tx_dbm: quantized.clamp(profile.tx_min_dbm, profile.tx_max_dbm),
        feasible: raw <= profile.tx_max_dbm,
    })
}

/// True iff `p_rx` reaches the sensitivity and the optional soft threshold.
pub fn packet_received(p_rx_dbm: f64, profile: &RadioProfile, soft_threshold_dbm: Option<f64>) -> bool {
    let floor = soft_threshold_dbm.map_or(profile.sensitivity_dbm, |s| s.max(profile.sensitivity_dbm));
    p_rx_dbm >= floor
}
