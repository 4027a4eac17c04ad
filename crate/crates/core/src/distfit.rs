//! Empirical distribution tools used to check whether RSSI changes and
//! acceleration changes are linearly related: histograms, empirical CDFs,
//! quantile-quantile maps and a least-squares linearity score.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DistError {
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("bin count must be at least 1")]
    ZeroBins,
    #[error("no probability levels given")]
    EmptyLevels,
    #[error("levels must be ascending and inside (0, 1); got {0}")]
    InvalidLevel(f64),
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("all x values are equal; slope undefined")]
    DegenerateFit,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DistError>;

fn check_values(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(DistError::EmptyInput);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(DistError::NonFinite);
    }
    Ok(())
}

/// Equal-width histogram. Bins are `[e_k, e_{k+1})` except the last, which is
/// closed so the maximum lands inside it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    /// Bin holding `x`, or `None` outside the edges.
    pub fn bin_of(&self, x: f64) -> Option<usize> {
        let b = self.counts.len();
        if !(self.edges[0]..=self.edges[b]).contains(&x) {
            return None;
        }
        let width = (self.edges[b] - self.edges[0]) / b as f64;
        let mut k = (((x - self.edges[0]) / width).floor() as usize).min(b - 1);
        // floating-point division can land one bin off near an edge
        while k > 0 && x < self.edges[k] {
            k -= 1;
        }
        while k + 1 < b && x >= self.edges[k + 1] {
            k += 1;
        }
        Some(k)
    }

    /// Writes `edge,count` rows: one per bin (left edge), then the closing
    /// right edge with count 0.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["edge", "count"])?;
        for (edge, count) in self.edges.iter().zip(&self.counts) {
            w.write_record([edge.to_string(), count.to_string()])?;
        }
        w.write_record([self.edges[self.counts.len()].to_string(), "0".to_string()])?;
        w.flush()?;
        Ok(())
    }
}

/// Histogram of `values` with `bins` equal-width bins over `[min, max]`. A
/// constant input gets a unit-width span centred on the value.
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    check_values(values)?;
    if bins == 0 {
        return Err(DistError::ZeroBins);
    }
    let (mut lo, mut hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if hi <= lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|k| lo + k as f64 * width).collect();
    edges.push(hi);
    let mut hist = Histogram {
        edges,
        counts: vec![0; bins],
        total: values.len() as u64,
    };
    for &v in values {
        let k = hist.bin_of(v).expect("value within [min, max]");
        hist.counts[k] += 1;
    }
    Ok(hist)
}

/// Empirical CDF, `F(x) = #{samples ≤ x} / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn eval(&self, x: f64) -> f64 {
        let below = self.sorted.partition_point(|&v| v <= x);
        below as f64 / self.sorted.len() as f64
    }

    /// Empirical quantile with lower interpolation: the sample at index
    /// `floor(p·(N−1))` of the sorted data.
    pub fn quantile(&self, p: f64) -> f64 {
        let n = self.sorted.len();
        let idx = ((p * (n - 1) as f64).floor() as usize).min(n - 1);
        self.sorted[idx]
    }
}

pub fn ecdf(values: &[f64]) -> Result<Ecdf> {
    check_values(values)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Ecdf { sorted })
}

/// Paired empirical quantiles of two samples at common probability levels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileMap {
    pub levels: Vec<f64>,
    /// `(Q_x(level), Q_y(level))`, one per level.
    pub points: Vec<(f64, f64)>,
}

impl QuantileMap {
    pub fn linearity_score(&self) -> Result<LinearFit> {
        linearity_score(self)
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["level", "qx", "qy"])?;
        for (level, (qx, qy)) in self.levels.iter().zip(&self.points) {
            w.write_record([level.to_string(), qx.to_string(), qy.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The 99 levels 0.01, 0.02, …, 0.99.
pub fn default_levels() -> Vec<f64> {
    (1..100).map(|k| k as f64 / 100.0).collect()
}

pub fn quantile_map(x: &Ecdf, y: &Ecdf, levels: &[f64]) -> Result<QuantileMap> {
    if levels.is_empty() {
        return Err(DistError::EmptyLevels);
    }
    let mut prev = 0.0;
    for &p in levels {
        if !(p > 0.0 && p < 1.0) || p <= prev {
            return Err(DistError::InvalidLevel(p));
        }
        prev = p;
    }
    Ok(QuantileMap {
        levels: levels.to_vec(),
        points: levels.iter().map(|&p| (x.quantile(p), y.quantile(p))).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least-squares line through arbitrary points.
pub fn fit_line(points: &[(f64, f64)]) -> Result<LinearFit> {
    if points.len() < 3 {
        return Err(DistError::TooFewPoints(points.len()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(DistError::DegenerateFit);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        let ss_res: f64 = points
            .iter()
            .map(|&(x, y)| (y - slope * x - intercept).powi(2))
            .sum();
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

pub fn linearity_score(map: &QuantileMap) -> Result<LinearFit> {
    fit_line(&map.points)
}
