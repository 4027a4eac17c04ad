//! Raw sensor ingestion: IMU and RSSI CSV parsing, sliding-window
//! downsampling of the IMU stream, nearest-neighbour time alignment and
//! per-channel max/min normalization.
//!
//! Timestamps are integer milliseconds throughout. A CSV whose first column
//! is `t_s` instead of `t_ms` is accepted and converted with round-half-even.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default downsampling window, in samples.
pub const DEFAULT_WINDOW: usize = 10;
/// Default window overlap fraction.
pub const DEFAULT_OVERLAP: f64 = 0.5;
/// Default pairing tolerance: half a 10 Hz period plus margin.
pub const DEFAULT_TOLERANCE_MS: i64 = 60;

/// Accepted RSSI range, dBm.
pub const RSSI_MIN_DBM: f64 = -150.0;
pub const RSSI_MAX_DBM: f64 = 30.0;

#[derive(Debug, Error)]
pub enum TraceError {
    /// `row` is the 1-based line number in the source; the header is line 1.
    #[error("row {row}: {reason}")]
    MalformedRow { row: u64, reason: String },
    #[error("row {row}: timestamp is not strictly increasing")]
    NonMonotonicTimestamp { row: u64 },
    #[error("row {row}: sequence number decreased")]
    NonMonotonicSequence { row: u64 },
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("empty input")]
    EmptyInput,
    #[error("invalid window {window} / overlap {overlap}")]
    InvalidWindow { window: usize, overlap: f64 },
    #[error("no RSSI sample has an IMU partner within {tolerance_ms} ms")]
    NoOverlap { tolerance_ms: i64 },
    #[error("channel {0} is constant")]
    DegenerateChannel(Channel),
    #[error("unknown channel {0:?}")]
    UnknownChannel(String),
    #[error("series has {len} samples, need at least {min}")]
    SeriesTooShort { len: usize, min: usize },
    #[error("invalid series: {0}")]
    InvalidSeries(String),
    #[error("series is already normalized")]
    AlreadyNormalized,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, TraceError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t_ms: i64,
    /// m/s², axes x, y, z.
    pub accel: [f64; 3],
    /// deg/s. Parsed and carried, never used by the estimator.
    pub gyro: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RssiSample {
    pub t_ms: i64,
    pub rssi_dbm: f64,
    pub seq: u64,
    pub tx_dbm: Option<f64>,
}

/// The four regression channels, in estimator order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Rssi,
    Ax,
    Ay,
    Az,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::Rssi, Channel::Ax, Channel::Ay, Channel::Az];

    pub fn index(self) -> usize {
        match self {
            Channel::Rssi => 0,
            Channel::Ax => 1,
            Channel::Ay => 2,
            Channel::Az => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Rssi => "rssi",
            Channel::Ax => "ax",
            Channel::Ay => "ay",
            Channel::Az => "az",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self> {
        Channel::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| TraceError::UnknownChannel(s.to_string()))
    }
}

/// Per-channel extrema used by max/min normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub channel_min: [f64; 4],
    pub channel_max: [f64; 4],
    /// Constant acceleration axes. They normalize to 0 and carry no weight in
    /// the estimator.
    #[serde(default)]
    pub dropped: Vec<Channel>,
}

impl NormalizationParams {
    pub fn is_dropped(&self, channel: Channel) -> bool {
        self.dropped.contains(&channel)
    }

    pub fn normalize(&self, value: f64, channel: Channel) -> f64 {
        let i = channel.index();
        if self.is_dropped(channel) {
            return 0.0;
        }
        (value - self.channel_min[i]) / (self.channel_max[i] - self.channel_min[i])
    }

    /// Inverse of [`normalize`](Self::normalize). A dropped channel maps back
    /// to its constant value.
    pub fn denormalize(&self, value: f64, channel: Channel) -> f64 {
        let i = channel.index();
        value * (self.channel_max[i] - self.channel_min[i]) + self.channel_min[i]
    }
}

/// Inverse max/min mapping for one channel.
pub fn denormalize(value: f64, channel: Channel, params: &NormalizationParams) -> f64 {
    params.denormalize(value, channel)
}

/// Preprocessing settings plus the resulting extrema, as written next to an
/// ingested series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessParams {
    pub window: usize,
    pub overlap: f64,
    pub tolerance_ms: i64,
    pub differenced: bool,
    #[serde(flatten)]
    pub normalization: NormalizationParams,
}

/// Lag-1 ready sequence of (RSSI, 3-axis acceleration) records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SeriesDoc")]
pub struct AlignedSeries {
    t_ms: Vec<i64>,
    rssi: Vec<f64>,
    accel: Vec<[f64; 3]>,
    period_ms: i64,
    normalization: Option<NormalizationParams>,
    differenced: bool,
}

#[derive(Deserialize)]
struct SeriesDoc {
    t_ms: Vec<i64>,
    rssi: Vec<f64>,
    accel: Vec<[f64; 3]>,
    period_ms: i64,
    normalization: Option<NormalizationParams>,
    differenced: bool,
}

impl TryFrom<SeriesDoc> for AlignedSeries {
    type Error = TraceError;

    fn try_from(doc: SeriesDoc) -> Result<Self> {
        let mut s = AlignedSeries::new(doc.t_ms, doc.rssi, doc.accel)?;
        s.period_ms = doc.period_ms;
        s.differenced = doc.differenced;
        if let Some(params) = doc.normalization {
            let in_range = s
                .rssi
                .iter()
                .chain(s.accel.iter().flatten())
                .all(|v| (0.0..=1.0).contains(v));
            if !in_range {
                return Err(TraceError::InvalidSeries(
                    "normalized series has values outside [0, 1]".into(),
                ));
            }
            s.normalization = Some(params);
        }
        Ok(s)
    }
}

impl AlignedSeries {
    /// Builds an unnormalized series. Timestamps must be strictly increasing
    /// and every value finite.
    pub fn new(t_ms: Vec<i64>, rssi: Vec<f64>, accel: Vec<[f64; 3]>) -> Result<Self> {
        let n = t_ms.len();
        if rssi.len() != n || accel.len() != n {
            return Err(TraceError::InvalidSeries(format!(
                "column lengths differ: t={n}, rssi={}, accel={}",
                rssi.len(),
                accel.len()
            )));
        }
        if n < 2 {
            return Err(TraceError::SeriesTooShort { len: n, min: 2 });
        }
        if t_ms.windows(2).any(|w| w[1] <= w[0]) {
            return Err(TraceError::InvalidSeries(
                "timestamps not strictly increasing".into(),
            ));
        }
        if !rssi.iter().chain(accel.iter().flatten()).all(|v| v.is_finite()) {
            return Err(TraceError::InvalidSeries("non-finite value".into()));
        }
        let period_ms = median_step(&t_ms);
        Ok(AlignedSeries {
            t_ms,
            rssi,
            accel,
            period_ms,
            normalization: None,
            differenced: false,
        })
    }

    pub fn len(&self) -> usize {
        self.rssi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rssi.is_empty()
    }

    pub fn t_ms(&self) -> &[i64] {
        &self.t_ms
    }

    pub fn rssi(&self) -> &[f64] {
        &self.rssi
    }

    pub fn accel(&self) -> &[[f64; 3]] {
        &self.accel
    }

    /// Nominal sample period: the median spacing of the paired timestamps.
    pub fn period_ms(&self) -> i64 {
        self.period_ms
    }

    pub fn normalization(&self) -> Option<&NormalizationParams> {
        self.normalization.as_ref()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalization.is_some()
    }

    pub fn is_differenced(&self) -> bool {
        self.differenced
    }

    /// Which of the four regressor channels carry information. Dropped
    /// acceleration axes are inactive.
    pub fn active_channels(&self) -> [bool; 4] {
        let mut active = [true; 4];
        if let Some(p) = &self.normalization {
            for c in &p.dropped {
                active[c.index()] = false;
            }
        }
        active
    }

    fn channel(&self, c: Channel) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |k| match c {
            Channel::Rssi => self.rssi[k],
            Channel::Ax => self.accel[k][0],
            Channel::Ay => self.accel[k][1],
            Channel::Az => self.accel[k][2],
        })
    }
}

fn median_step(t: &[i64]) -> i64 {
    let mut steps: Vec<i64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    steps.sort_unstable();
    steps[steps.len() / 2]
}

// ---------------------------------------------------------------------------
// CSV parsing
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
enum TimeUnit {
    Millis,
    Seconds,
}

fn time_unit(header: &str) -> Result<TimeUnit> {
    match header {
        "t_ms" => Ok(TimeUnit::Millis),
        "t_s" => Ok(TimeUnit::Seconds),
        other => Err(TraceError::BadHeader(format!(
            "first column must be t_ms or t_s, found {other:?}"
        ))),
    }
}

/// CSV reader over the whole input with CRLF folded to LF; the csv crate
/// reports line numbers one short on CRLF input otherwise.
fn reader<R: Read>(mut source: R) -> Result<csv::Reader<std::io::Cursor<Vec<u8>>>> {
    let mut raw = Vec::new();
    source.read_to_end(&mut raw)?;
    let mut bytes = Vec::with_capacity(raw.len());
    for (i, &b) in raw.iter().enumerate() {
        if !(b == b'\r' && raw.get(i + 1) == Some(&b'\n')) {
            bytes.push(b);
        }
    }
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(std::io::Cursor::new(bytes)))
}

fn header_fields<R: Read>(rdr: &mut csv::Reader<R>) -> Result<Vec<String>> {
    let headers = rdr.headers()?;
    Ok(headers.iter().map(str::to_string).collect())
}

fn malformed(row: u64, reason: impl Into<String>) -> TraceError {
    TraceError::MalformedRow {
        row,
        reason: reason.into(),
    }
}

fn parse_time(field: &str, unit: TimeUnit, row: u64) -> Result<i64> {
    let parsed = match unit {
        TimeUnit::Millis => field.parse::<i64>().ok(),
        TimeUnit::Seconds => seconds_to_ms(field),
    };
    parsed.ok_or_else(|| malformed(row, format!("bad timestamp {field:?}")))
}

fn parse_finite(field: &str, name: &str, row: u64) -> Result<f64> {
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(malformed(row, format!("bad {name} value {field:?}"))),
    }
}

/// Converts a plain decimal seconds string to milliseconds, rounding the
/// sub-millisecond remainder half-to-even. Works on the decimal digits
/// directly so no binary rounding creeps in.
pub fn seconds_to_ms(s: &str) -> Option<i64> {
    let (negative, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    let all_digits = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
    if !all_digits(int_part) || !all_digits(frac_part) {
        return None;
    }
    let whole: i64 = if int_part.is_empty() {
        0
    } else {
        int_part.parse().ok()?
    };
    let digits: Vec<u8> = frac_part.bytes().map(|b| b - b'0').collect();
    let mut millis: i64 = 0;
    for i in 0..3 {
        millis = millis * 10 + i64::from(*digits.get(i).unwrap_or(&0));
    }
    let rest = digits.get(3..).unwrap_or(&[]);
    let round_up = match rest.first() {
        None => false,
        Some(&d) if d > 5 => true,
        Some(&d) if d < 5 => false,
        Some(_) => {
            if rest[1..].iter().any(|&d| d != 0) {
                true
            } else {
                millis % 2 == 1
            }
        }
    };
    let mut total = whole.checked_mul(1000)?.checked_add(millis)?;
    if round_up {
        total += 1;
    }
    Some(if negative { -total } else { total })
}

/// Parses an IMU CSV with header `t_ms,ax,ay,az[,gx,gy,gz]`.
pub fn parse_imu_csv<R: Read>(source: R) -> Result<Vec<ImuSample>> {
    let mut rdr = reader(source)?;
    let header = header_fields(&mut rdr)?;
    let with_gyro = match header.len() {
        4 => false,
        7 => true,
        n => {
            return Err(TraceError::BadHeader(format!(
                "expected 4 or 7 IMU columns, found {n}"
            )))
        }
    };
    let unit = time_unit(&header[0])?;
    let expected = ["ax", "ay", "az", "gx", "gy", "gz"];
    for (got, want) in header[1..].iter().zip(expected) {
        if got != want {
            return Err(TraceError::BadHeader(format!(
                "expected column {want}, found {got:?}"
            )));
        }
    }

    let mut out: Vec<ImuSample> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let row = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(malformed(
                row,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let t_ms = parse_time(&record[0], unit, row)?;
        let mut accel = [0.0; 3];
        for (axis, slot) in accel.iter_mut().enumerate() {
            *slot = parse_finite(&record[axis + 1], expected[axis], row)?;
        }
        let gyro = if with_gyro {
            let mut g = [0.0; 3];
            for (axis, slot) in g.iter_mut().enumerate() {
                *slot = parse_finite(&record[axis + 4], expected[axis + 3], row)?;
            }
            Some(g)
        } else {
            None
        };
        if let Some(prev) = out.last() {
            if t_ms <= prev.t_ms {
                return Err(TraceError::NonMonotonicTimestamp { row });
            }
        }
        out.push(ImuSample { t_ms, accel, gyro });
    }
    Ok(out)
}

/// Parses an RSSI CSV with header `t_ms,rssi_dbm,seq[,tx_dbm]`. An empty
/// `tx_dbm` field means "not recorded".
pub fn parse_rssi_csv<R: Read>(source: R) -> Result<Vec<RssiSample>> {
    let mut rdr = reader(source)?;
    let header = header_fields(&mut rdr)?;
    if header.len() != 3 && header.len() != 4 {
        return Err(TraceError::BadHeader(format!(
            "expected 3 or 4 RSSI columns, found {}",
            header.len()
        )));
    }
    let unit = time_unit(&header[0])?;
    for (got, want) in header[1..].iter().zip(["rssi_dbm", "seq", "tx_dbm"]) {
        if got != want {
            return Err(TraceError::BadHeader(format!(
                "expected column {want}, found {got:?}"
            )));
        }
    }

    let mut out: Vec<RssiSample> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let row = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(malformed(
                row,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let t_ms = parse_time(&record[0], unit, row)?;
        let rssi_dbm = parse_finite(&record[1], "rssi_dbm", row)?;
        if !(RSSI_MIN_DBM..=RSSI_MAX_DBM).contains(&rssi_dbm) {
            return Err(malformed(row, format!("rssi {rssi_dbm} dBm out of range")));
        }
        let seq = record[2]
            .parse::<u64>()
            .map_err(|_| malformed(row, format!("bad seq {:?}", &record[2])))?;
        let tx_dbm = match record.get(3) {
            None | Some("") => None,
            Some(f) => Some(parse_finite(f, "tx_dbm", row)?),
        };
        if let Some(prev) = out.last() {
            if t_ms <= prev.t_ms {
                return Err(TraceError::NonMonotonicTimestamp { row });
            }
            if seq < prev.seq {
                return Err(TraceError::NonMonotonicSequence { row });
            }
        }
        out.push(RssiSample {
            t_ms,
            rssi_dbm,
            seq,
            tx_dbm,
        });
    }
    Ok(out)
}

pub fn write_imu_csv<W: Write>(samples: &[ImuSample], sink: W) -> Result<()> {
    let with_gyro = samples.first().is_some_and(|s| s.gyro.is_some());
    let mut w = csv::Writer::from_writer(sink);
    if with_gyro {
        w.write_record(["t_ms", "ax", "ay", "az", "gx", "gy", "gz"])?;
    } else {
        w.write_record(["t_ms", "ax", "ay", "az"])?;
    }
    for s in samples {
        let mut rec = vec![s.t_ms.to_string()];
        rec.extend(s.accel.iter().map(f64::to_string));
        if with_gyro {
            let g = s.gyro.unwrap_or([0.0; 3]);
            rec.extend(g.iter().map(f64::to_string));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rssi_csv<W: Write>(samples: &[RssiSample], sink: W) -> Result<()> {
    let with_tx = samples.iter().any(|s| s.tx_dbm.is_some());
    let mut w = csv::Writer::from_writer(sink);
    if with_tx {
        w.write_record(["t_ms", "rssi_dbm", "seq", "tx_dbm"])?;
    } else {
        w.write_record(["t_ms", "rssi_dbm", "seq"])?;
    }
    for s in samples {
        let mut rec = vec![s.t_ms.to_string(), s.rssi_dbm.to_string(), s.seq.to_string()];
        if with_tx {
            rec.push(s.tx_dbm.map(|v| v.to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Downsampling
// ---------------------------------------------------------------------------

/// Hop between consecutive window starts, `round(window·(1−overlap))`.
pub fn hop_size(window: usize, overlap: f64) -> Result<usize> {
    if window == 0 || !overlap.is_finite() || !(0.0..1.0).contains(&overlap) {
        return Err(TraceError::InvalidWindow { window, overlap });
    }
    let hop = (window as f64 * (1.0 - overlap)).round() as usize;
    if hop == 0 {
        return Err(TraceError::InvalidWindow { window, overlap });
    }
    Ok(hop)
}

/// Averages overlapping windows of the IMU stream. Output `k` is the per-axis
/// mean of `samples[k·hop .. k·hop + window]`, stamped with the mean window
/// timestamp. Fewer samples than one window gives an empty output.
pub fn downsample_imu(samples: &[ImuSample], window: usize, overlap: f64) -> Result<Vec<ImuSample>> {
    if samples.is_empty() {
        return Err(TraceError::EmptyInput);
    }
    let hop = hop_size(window, overlap)?;
    if samples.len() < window {
        return Ok(Vec::new());
    }
    let count = (samples.len() - window) / hop + 1;
    let w = window as f64;
    let out = (0..count)
        .map(|k| {
            let chunk = &samples[k * hop..k * hop + window];
            let t_sum: i128 = chunk.iter().map(|s| i128::from(s.t_ms)).sum();
            let mut accel = [0.0; 3];
            for s in chunk {
                for (acc, v) in accel.iter_mut().zip(s.accel) {
                    *acc += v;
                }
            }
            accel.iter_mut().for_each(|a| *a /= w);
            let gyro = if chunk.iter().all(|s| s.gyro.is_some()) {
                let mut g = [0.0; 3];
                for s in chunk {
                    for (acc, v) in g.iter_mut().zip(s.gyro.unwrap_or_default()) {
                        *acc += v;
                    }
                }
                g.iter_mut().for_each(|a| *a /= w);
                Some(g)
            } else {
                None
            };
            ImuSample {
                t_ms: (t_sum as f64 / w).round_ties_even() as i64,
                accel,
                gyro,
            }
        })
        .collect();
    Ok(out)
}

// ---------------------------------------------------------------------------
// Alignment
// ---------------------------------------------------------------------------

/// Outcome of pairing the RSSI stream with the IMU stream.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub series: AlignedSeries,
    pub paired: usize,
    /// RSSI samples without an IMU partner (none in range, or lost to a
    /// nearer RSSI sample).
    pub dropped: usize,
}

/// Pairs every RSSI sample with the nearest IMU sample within
/// `±tolerance_ms`. An IMU sample is used at most once: the RSSI sample
/// closest to it wins, and the earlier one wins a tie. Ties between two IMU
/// samples equidistant from one RSSI sample go to the earlier IMU sample.
pub fn align(rssi: &[RssiSample], imu: &[ImuSample], tolerance_ms: i64) -> Result<Alignment> {
    if rssi.is_empty() || imu.is_empty() {
        return Err(TraceError::EmptyInput);
    }
    // best[i] = (gap, rssi index) of the current claimant of imu[i]
    let mut best: Vec<Option<(i64, usize)>> = vec![None; imu.len()];
    for (j, r) in rssi.iter().enumerate() {
        let idx = imu.partition_point(|s| s.t_ms < r.t_ms);
        let mut candidate: Option<(i64, usize)> = None;
        for i in [idx.checked_sub(1), Some(idx)].into_iter().flatten() {
            if let Some(s) = imu.get(i) {
                let gap = (s.t_ms - r.t_ms).abs();
                if candidate.is_none_or(|(g, _)| gap < g) {
                    candidate = Some((gap, i));
                }
            }
        }
        if let Some((gap, i)) = candidate {
            if gap <= tolerance_ms && best[i].is_none_or(|(g, _)| gap < g) {
                best[i] = Some((gap, j));
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = best
        .iter()
        .enumerate()
        .filter_map(|(i, b)| b.map(|(_, j)| (j, i)))
        .collect();
    pairs.sort_unstable();

    if pairs.is_empty() {
        return Err(TraceError::NoOverlap { tolerance_ms });
    }
    let paired = pairs.len();
    let series = AlignedSeries::new(
        pairs.iter().map(|&(j, _)| rssi[j].t_ms).collect(),
        pairs.iter().map(|&(j, _)| rssi[j].rssi_dbm).collect(),
        pairs.iter().map(|&(_, i)| imu[i].accel).collect(),
    )?;
    Ok(Alignment {
        series,
        paired,
        dropped: rssi.len() - paired,
    })
}

// ---------------------------------------------------------------------------
// Differencing and normalization
// ---------------------------------------------------------------------------

/// Replaces every channel by its first difference. Record `k` of the output
/// is `x[k+1] − x[k]`, stamped with the later timestamp.
pub fn difference(series: &AlignedSeries) -> Result<AlignedSeries> {
    if series.is_normalized() {
        return Err(TraceError::AlreadyNormalized);
    }
    if series.len() < 3 {
        return Err(TraceError::SeriesTooShort {
            len: series.len(),
            min: 3,
        });
    }
    let t = series.t_ms[1..].to_vec();
    let r = series.rssi.windows(2).map(|w| w[1] - w[0]).collect();
    let a = series
        .accel
        .windows(2)
        .map(|w| [w[1][0] - w[0][0], w[1][1] - w[0][1], w[1][2] - w[0][2]])
        .collect();
    let mut out = AlignedSeries::new(t, r, a)?;
    out.period_ms = series.period_ms;
    out.differenced = true;
    Ok(out)
}

/// Max/min normalization per channel into `[0, 1]`.
///
/// A constant RSSI channel is an error. A constant acceleration axis is
/// dropped with a warning: its values become 0 and the estimator ignores it.
pub fn normalize(series: &AlignedSeries) -> Result<(AlignedSeries, NormalizationParams)> {
    if series.is_normalized() {
        return Err(TraceError::AlreadyNormalized);
    }
    let mut channel_min = [0.0; 4];
    let mut channel_max = [0.0; 4];
    let mut dropped = Vec::new();
    for c in Channel::ALL {
        let (lo, hi) = series
            .channel(c)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
        channel_min[c.index()] = lo;
        channel_max[c.index()] = hi;
        if hi <= lo {
            if c == Channel::Rssi {
                return Err(TraceError::DegenerateChannel(c));
            }
            log::warn!("acceleration axis {c} is constant ({lo}); dropping it");
            dropped.push(c);
        }
    }
    let params = NormalizationParams {
        channel_min,
        channel_max,
        dropped,
    };
    let rssi = series
        .rssi
        .iter()
        .map(|&v| params.normalize(v, Channel::Rssi))
        .collect();
    let accel = series
        .accel
        .iter()
        .map(|a| {
            [
                params.normalize(a[0], Channel::Ax),
                params.normalize(a[1], Channel::Ay),
                params.normalize(a[2], Channel::Az),
            ]
        })
        .collect();
    let out = AlignedSeries {
        t_ms: series.t_ms.clone(),
        rssi,
        accel,
        period_ms: series.period_ms,
        normalization: Some(params.clone()),
        differenced: series.differenced,
    };
    Ok((out, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn imu(t: i64, a: [f64; 3]) -> ImuSample {
        ImuSample {
            t_ms: t,
            accel: a,
            gyro: None,
        }
    }

    fn rssi(t: i64, dbm: f64, seq: u64) -> RssiSample {
        RssiSample {
            t_ms: t,
            rssi_dbm: dbm,
            seq,
            tx_dbm: None,
        }
    }

    #[test]
    fn parses_three_imu_rows_in_order() {
        let src = "t_ms,ax,ay,az\n0,0.1,0.2,9.8\n100,0.2,0.3,9.7\n200,0.3,0.4,9.6\n";
        let s = parse_imu_csv(src.as_bytes()).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[1].t_ms, 100);
        assert_eq!(s[2].accel, [0.3, 0.4, 9.6]);
        assert!(s[0].gyro.is_none());
    }

    #[test]
    fn parses_gyro_columns_and_crlf() {
        let src = "t_ms,ax,ay,az,gx,gy,gz\r\n0,1,2,3,4,5,6\r\n10,1,2,3,4,5,7\r\n";
        let s = parse_imu_csv(src.as_bytes()).unwrap();
        assert_eq!(s[1].gyro, Some([4.0, 5.0, 7.0]));
    }

    #[test]
    fn nan_accel_is_a_malformed_row() {
        let src = "t_ms,ax,ay,az\n0,1,2,3\n100,NaN,2,3\n";
        match parse_imu_csv(src.as_bytes()) {
            Err(TraceError::MalformedRow { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_field_count_is_malformed() {
        let src = "t_ms,ax,ay,az\n0,1,2\n";
        assert!(matches!(
            parse_imu_csv(src.as_bytes()),
            Err(TraceError::MalformedRow { row: 2, .. })
        ));
    }

    #[test]
    fn equal_timestamps_are_rejected() {
        let src = "t_ms,ax,ay,az\n0,1,2,3\n0,1,2,3\n";
        assert!(matches!(
            parse_imu_csv(src.as_bytes()),
            Err(TraceError::NonMonotonicTimestamp { row: 3 })
        ));
    }

    #[test]
    fn bad_header_is_rejected() {
        assert!(matches!(
            parse_imu_csv("time,ax,ay,az\n".as_bytes()),
            Err(TraceError::BadHeader(_))
        ));
        assert!(matches!(
            parse_rssi_csv("t_ms,rssi,seq\n".as_bytes()),
            Err(TraceError::BadHeader(_))
        ));
    }

    #[test]
    fn parses_two_rssi_rows() {
        let src = "t_ms,rssi_dbm,seq\n0,-50,1\n100,-52,2\n";
        let s = parse_rssi_csv(src.as_bytes()).unwrap();
        assert_eq!(s, vec![rssi(0, -50.0, 1), rssi(100, -52.0, 2)]);
    }

    #[test]
    fn rssi_out_of_range_is_malformed() {
        let src = "t_ms,rssi_dbm,seq\n0,-200,1\n";
        assert!(matches!(
            parse_rssi_csv(src.as_bytes()),
            Err(TraceError::MalformedRow { row: 2, .. })
        ));
    }

    #[test]
    fn decreasing_seq_is_rejected_but_gaps_are_fine() {
        let ok = "t_ms,rssi_dbm,seq,tx_dbm\n0,-50,1,0\n100,-52,5,\n";
        let s = parse_rssi_csv(ok.as_bytes()).unwrap();
        assert_eq!(s[0].tx_dbm, Some(0.0));
        assert_eq!(s[1].tx_dbm, None);
        let bad = "t_ms,rssi_dbm,seq\n0,-50,2\n100,-52,1\n";
        assert!(matches!(
            parse_rssi_csv(bad.as_bytes()),
            Err(TraceError::NonMonotonicSequence { row: 3 })
        ));
    }

    #[test]
    fn seconds_convert_half_even() {
        assert_eq!(seconds_to_ms("1.5"), Some(1500));
        assert_eq!(seconds_to_ms("0.0125"), Some(12));
        assert_eq!(seconds_to_ms("0.0135"), Some(14));
        assert_eq!(seconds_to_ms("0.01251"), Some(13));
        assert_eq!(seconds_to_ms("2"), Some(2000));
        assert_eq!(seconds_to_ms("-0.0005"), Some(0));
        assert_eq!(seconds_to_ms("1e3"), None);
        let src = "t_s,rssi_dbm,seq\n0.1,-50,1\n0.2,-51,2\n";
        assert_eq!(parse_rssi_csv(src.as_bytes()).unwrap()[1].t_ms, 200);
    }

    #[test]
    fn csv_writers_round_trip() {
        let samples = vec![imu(0, [0.1, -0.2, 9.81]), imu(100, [1e-3, 2.5, -3.0])];
        let mut buf = Vec::new();
        write_imu_csv(&samples, &mut buf).unwrap();
        assert_eq!(parse_imu_csv(buf.as_slice()).unwrap(), samples);

        let r = vec![rssi(0, -50.5, 1), rssi(100, -61.25, 3)];
        let mut buf = Vec::new();
        write_rssi_csv(&r, &mut buf).unwrap();
        assert_eq!(parse_rssi_csv(buf.as_slice()).unwrap(), r);
    }

    #[test]
    fn downsample_twenty_samples_gives_three_windows() {
        let s: Vec<_> = (0..20).map(|k| imu(k * 100, [0.0; 3])).collect();
        assert_eq!(downsample_imu(&s, 10, 0.5).unwrap().len(), 3);
    }

    #[test]
    fn downsample_constant_window() {
        let s: Vec<_> = (0..10).map(|k| imu(k * 100, [1.0, 2.0, 3.0])).collect();
        let d = downsample_imu(&s, 10, 0.5).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].accel, [1.0, 2.0, 3.0]);
        assert_eq!(d[0].t_ms, 450);
    }

    #[test]
    fn downsample_ramp_means() {
        let s: Vec<_> = (0..15).map(|k| imu(k * 100, [k as f64, 0.0, 0.0])).collect();
        let d = downsample_imu(&s, 10, 0.5).unwrap();
        let ax: Vec<f64> = d.iter().map(|x| x.accel[0]).collect();
        assert_eq!(ax, vec![4.5, 9.5]);
    }

    #[test]
    fn downsample_errors() {
        let s = vec![imu(0, [0.0; 3])];
        assert!(matches!(
            downsample_imu(&[], 10, 0.5),
            Err(TraceError::EmptyInput)
        ));
        assert!(matches!(
            downsample_imu(&s, 0, 0.5),
            Err(TraceError::InvalidWindow { .. })
        ));
        assert!(matches!(
            downsample_imu(&s, 10, 1.0),
            Err(TraceError::InvalidWindow { .. })
        ));
        assert!(matches!(
            downsample_imu(&s, 10, -0.1),
            Err(TraceError::InvalidWindow { .. })
        ));
        assert!(downsample_imu(&s, 10, 0.5).unwrap().is_empty());
    }

    #[test]
    fn align_identical_timestamps() {
        let r: Vec<_> = (0..5)
            .map(|k| rssi(k * 100, -50.0 - k as f64, k as u64))
            .collect();
        let i: Vec<_> = (0..5).map(|k| imu(k * 100, [k as f64; 3])).collect();
        let a = align(&r, &i, 60).unwrap();
        assert_eq!(a.paired, 5);
        assert_eq!(a.dropped, 0);
        assert_eq!(a.series.accel()[3], [3.0; 3]);
    }

    #[test]
    fn align_picks_nearest() {
        let r = vec![rssi(105, -50.0, 1), rssi(300, -51.0, 2)];
        let i = vec![imu(100, [1.0; 3]), imu(200, [2.0; 3]), imu(310, [3.0; 3])];
        let a = align(&r, &i, 50).unwrap();
        assert_eq!(a.series.accel()[0], [1.0; 3]);
        assert_eq!(a.series.accel()[1], [3.0; 3]);
    }

    #[test]
    fn align_one_imu_sample_per_rssi() {
        // Both RSSI samples are nearest to imu@100; the closer one keeps it.
        let r = vec![
            rssi(90, -50.0, 1),
            rssi(104, -51.0, 2),
            rssi(300, -52.0, 3),
            rssi(400, -53.0, 4),
        ];
        let i = vec![imu(100, [1.0; 3]), imu(300, [3.0; 3]), imu(400, [4.0; 3])];
        let a = align(&r, &i, 50).unwrap();
        assert_eq!(a.paired, 3);
        assert_eq!(a.dropped, 1);
        assert_eq!(a.series.t_ms(), &[104, 300, 400]);
    }

    #[test]
    fn align_tie_goes_to_earlier_rssi() {
        let r = vec![rssi(90, -50.0, 1), rssi(110, -51.0, 2), rssi(300, -52.0, 3)];
        let i = vec![imu(100, [1.0; 3]), imu(300, [3.0; 3])];
        let a = align(&r, &i, 50).unwrap();
        assert_eq!(a.series.t_ms(), &[90, 300]);
    }

    #[test]
    fn align_without_overlap_fails() {
        let r = vec![rssi(1000, -50.0, 1)];
        let i = vec![imu(0, [0.0; 3])];
        assert!(matches!(align(&r, &i, 60), Err(TraceError::NoOverlap { .. })));
    }

    fn series(r: Vec<f64>, a: Vec<[f64; 3]>) -> AlignedSeries {
        let t = (0..r.len() as i64).map(|k| k * 100).collect();
        AlignedSeries::new(t, r, a).unwrap()
    }

    #[test]
    fn normalize_affine_map() {
        let s = series(
            vec![-80.0, -60.0, -40.0],
            vec![[0.0, 1.0, 5.0], [0.5, 0.0, 6.0], [1.0, 1.0, 7.0]],
        );
        let (n, p) = normalize(&s).unwrap();
        assert_eq!(n.rssi(), &[0.0, 0.5, 1.0]);
        assert_eq!(n.accel()[1], [0.5, 0.0, 0.5]);
        assert_eq!(p.channel_min[0], -80.0);
        assert_eq!(
            n.accel().iter().map(|a| a[0]).collect::<Vec<_>>(),
            vec![0.0, 0.5, 1.0]
        );
    }

    #[test]
    fn normalize_constant_rssi_fails() {
        let s = series(vec![-50.0; 3], vec![[0.0; 3], [1.0; 3], [2.0; 3]]);
        assert!(matches!(
            normalize(&s),
            Err(TraceError::DegenerateChannel(Channel::Rssi))
        ));
    }

    #[test]
    fn normalize_constant_axis_is_dropped() {
        let s = series(
            vec![-50.0, -40.0, -45.0],
            vec![[0.0, 2.0, 1.0], [1.0, 2.0, 0.0], [2.0, 2.0, 3.0]],
        );
        let (n, p) = normalize(&s).unwrap();
        assert_eq!(p.dropped, vec![Channel::Ay]);
        assert!(n.accel().iter().all(|a| a[1] == 0.0));
        assert_eq!(n.active_channels(), [true, true, false, true]);
        assert_eq!(p.denormalize(0.0, Channel::Ay), 2.0);
    }

    #[test]
    fn denormalize_examples() {
        let p = NormalizationParams {
            channel_min: [-80.0, 0.0, 0.0, 0.0],
            channel_max: [-40.0, 1.0, 1.0, 1.0],
            dropped: vec![],
        };
        assert_eq!(denormalize(0.5, Channel::Rssi, &p), -60.0);
        assert_eq!(denormalize(0.0, Channel::Rssi, &p), -80.0);
        assert_eq!(denormalize(1.0, Channel::Rssi, &p), -40.0);
    }

    #[test]
    fn channel_names_parse() {
        assert_eq!("az".parse::<Channel>().unwrap(), Channel::Az);
        assert!(matches!(
            "gx".parse::<Channel>(),
            Err(TraceError::UnknownChannel(_))
        ));
    }

    #[test]
    fn difference_shortens_by_one() {
        let s = series(
            vec![1.0, 3.0, 6.0],
            vec![[0.0; 3], [1.0, 2.0, 3.0], [1.0, 1.0, 1.0]],
        );
        let d = difference(&s).unwrap();
        assert!(d.is_differenced());
        assert_eq!(d.rssi(), &[2.0, 3.0]);
        assert_eq!(d.accel()[1], [0.0, -1.0, -2.0]);
        assert_eq!(d.t_ms(), &[100, 200]);
    }

    #[test]
    fn series_json_round_trip() {
        let s = series(
            vec![-80.0, -60.0, -40.0],
            vec![[0.0, 1.0, 5.0], [0.5, 0.0, 6.0], [1.0, 1.0, 7.0]],
        );
        let (n, _) = normalize(&s).unwrap();
        let json = serde_json::to_string(&n).unwrap();
        let back: AlignedSeries = serde_json::from_str(&json).unwrap();
        assert_eq!(back, n);
    }

    #[test]
    fn preprocess_params_field_names() {
        let p = PreprocessParams {
            window: 10,
            overlap: 0.5,
            tolerance_ms: 60,
            differenced: false,
            normalization: NormalizationParams {
                channel_min: [0.0; 4],
                channel_max: [1.0; 4],
                dropped: vec![],
            },
        };
        let v = serde_json::to_value(&p).unwrap();
        for key in ["window", "overlap", "tolerance_ms", "channel_min", "channel_max"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
}
