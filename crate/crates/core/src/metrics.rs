//! Reconstruction and derivative-accuracy metrics.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Root-mean-square error of `estimate` normalised by the range of `truth`.
pub fn nrmse(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            context: "nrmse",
            expected: truth.len(),
            got: estimate.len(),
        });
    }
    if truth.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: truth.len(),
        });
    }
    let (lo, hi) = min_max(truth);
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::ZeroRange);
    }
    let mse = estimate
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / truth.len() as f64;
    Ok(mse.sqrt() / range)
}

fn min_max(s: &[f64]) -> (f64, f64) {
    s.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
}

/// Per-column squared norm `||a_j - b_j||²`.
pub fn squared_error_series(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            context: "squared error series",
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok((0..a.ncols())
        .map(|j| (a.column(j) - b.column(j)).norm_squared())
        .collect())
}

pub fn mean(series: &[f64]) -> f64 {
    series.iter().sum::<f64>() / series.len() as f64
}

/// Equal-width histogram normalised to unit integral.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub densities: Vec<f64>,
}

impl Histogram {
    pub fn integral(&self) -> f64 {
        self.densities
            .iter()
            .zip(self.edges.windows(2))
            .map(|(d, e)| d * (e[1] - e[0]))
            .sum()
    }

    /// `∫ |p - q|` for histograms sharing the same edges.
    pub fn l1_distance(&self, other: &Histogram) -> Result<f64> {
        if self.edges != other.edges {
            return Err(Error::InvalidParameter("histograms have different bin edges".into()));
        }
        Ok(self
            .densities
            .iter()
            .zip(&other.densities)
            .zip(self.edges.windows(2))
            .map(|((p, q), e)| (p - q).abs() * (e[1] - e[0]))
            .sum())
    }
}

/// Histogram of `series` over `[lo, hi]` with `n_bins` equal bins. A zero
/// width range collapses to a single unit-width bin centred on `lo`.
pub fn pdf_histogram_in(series: &[f64], n_bins: usize, lo: f64, hi: f64) -> Result<Histogram> {
    if n_bins == 0 {
        return Err(Error::InvalidParameter("n_bins must be at least 1".into()));
    }
    if series.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    if !(hi > lo) {
        return Ok(Histogram {
            edges: vec![lo - 0.5, lo + 0.5],
            densities: vec![1.0],
        });
    }
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for &v in series {
        let b = (((v - lo) / width).floor() as isize).clamp(0, n_bins as isize - 1) as usize;
        counts[b] += 1;
    }
    let edges: Vec<f64> = (0..=n_bins)
        .map(|i| if i == n_bins { hi } else { lo + i as f64 * width })
        .collect();
    let total = series.len() as f64;
    let densities = counts
        .iter()
        .zip(edges.windows(2))
        .map(|(c, e)| *c as f64 / (total * (e[1] - e[0])))
        .collect();
    Ok(Histogram { edges, densities })
}

/// Histogram over the range of `series` itself.
pub fn pdf_histogram(series: &[f64], n_bins: usize) -> Result<Histogram> {
    let (lo, hi) = min_max(series);
    pdf_histogram_in(series, n_bins, lo, hi)
}

/// Histograms of several series on the common range of all of them.
pub fn pdf_histograms_shared(series: &[&[f64]], n_bins: usize) -> Result<Vec<Histogram>> {
    let (lo, hi) = series
        .iter()
        .map(|s| min_max(s))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |a, b| (a.0.min(b.0), a.1.max(b.1)));
    series.iter().map(|s| pdf_histogram_in(s, n_bins, lo, hi)).collect()
}

/// One `metric,variable,set,reservoir_size,scheme,value` row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub variable: String,
    pub set: String,
    pub reservoir_size: usize,
    pub scheme: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramRow {
    pub variable: String,
    pub set: String,
    pub histogram: Histogram,
}

/// Collected metrics of one experiment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
    pub histograms: Vec<HistogramRow>,
}

impl MetricsReport {
    pub fn push(&mut self, metric: &str, variable: &str, set: &str, reservoir_size: usize, scheme: &str, value: f64) {
        self.rows.push(MetricRow {
            metric: metric.into(),
            variable: variable.into(),
            set: set.into(),
            reservoir_size,
            scheme: scheme.into(),
            value,
        });
    }

    pub fn extend(&mut self, other: MetricsReport) {
        self.rows.extend(other.rows);
        self.histograms.extend(other.histograms);
    }

    /// First row matching all given keys.
    pub fn get(&self, metric: &str, variable: &str, set: &str, reservoir_size: usize, scheme: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| {
                r.metric == metric
                    && r.variable == variable
                    && r.set == set
                    && r.reservoir_size == reservoir_size
                    && r.scheme == scheme
            })
            .map(|r| r.value)
    }

    pub fn write_csv<W: Write>(&self, mut out: W, comment: Option<&str>) -> std::io::Result<()> {
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "metric,variable,set,reservoir_size,scheme,value")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{:.16e}",
                r.metric, r.variable, r.set, r.reservoir_size, r.scheme, r.value
            )?;
        }
        out.flush()
    }

    pub fn write_histograms_csv<W: Write>(&self, mut out: W, comment: Option<&str>) -> std::io::Result<()> {
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "variable,set,bin_left,bin_right,density")?;
        for h in &self.histograms {
            for (d, e) in h.histogram.densities.iter().zip(h.histogram.edges.windows(2)) {
                writeln!(out, "{},{},{:.16e},{:.16e},{:.16e}", h.variable, h.set, e[0], e[1], d)?;
            }
        }
        out.flush()
    }
}
