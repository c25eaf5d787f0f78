//! Least-squares fits over benchmark results and comparison with reference
//! regression lines.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least two distinct x values, got {0} points")]
    Degenerate(usize),
    #[error("non-finite value in input")]
    NonFinite,
    #[error("results file: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("reference data: {0}")]
    Reference(#[from] serde_json::Error),
}

/// One row of the results file: the scenario and what one repetition of it
/// measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub n: usize,
    pub latency_ms: f64,
    pub rate_mbit: f64,
    pub loss: f64,
    pub pf: usize,
    pub sessions: u32,
    pub repetition: u32,
    /// Whole batch, simulated or wall-clock.
    pub duration_ms: f64,
    pub bytes_per_peer: f64,
    pub messages: u64,
    pub packets: u64,
    pub retransmissions: u64,
    pub failures: u64,
    pub predicted_ms: f64,
}

impl RunMetrics {
    pub fn duration_per_session_ms(&self) -> f64 {
        self.duration_ms / f64::from(self.sessions)
    }
}

pub fn write_results<W: io::Write>(out: W, rows: &[RunMetrics]) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results<R: io::Read>(input: R) -> Result<Vec<RunMetrics>, AnalysisError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn load_results(path: impl AsRef<Path>) -> Result<Vec<RunMetrics>, AnalysisError> {
    read_results(std::fs::File::open(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    /// Mean squared residual.
    pub mse: f64,
    pub r_squared: f64,
    pub sample_count: usize,
}

impl RegressionFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Mean squared residual of the line `intercept + slope * x`.
pub fn mean_squared_error(points: &[(f64, f64)], slope: f64, intercept: f64) -> f64 {
    points.iter().map(|(x, y)| (y - intercept - slope * x).powi(2)).sum::<f64>() / points.len() as f64
}

/// Ordinary least squares over `points`.
pub fn fit_linear(points: &[(f64, f64)]) -> Result<RegressionFit, AnalysisError> {
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    let count = points.len();
    if count < 2 {
        return Err(AnalysisError::Degenerate(count));
    }
    let nf = count as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = points.iter().map(|(_, y)| (y - my).powi(2)).sum();
    if sxx <= f64::EPSILON * mx.abs().max(1.0) * nf {
        return Err(AnalysisError::Degenerate(count));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mse = mean_squared_error(points, slope, intercept);
    let r_squared = if syy == 0.0 { 1.0 } else { (1.0 - mse * nf / syy).clamp(0.0, 1.0) };
    Ok(RegressionFit { slope, intercept, mse, r_squared, sample_count: count })
}

/// Absolute tolerances for [`compare_to_reference`]. `None` skips a field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientVerdict {
    pub name: String,
    pub observed: f64,
    pub reference: f64,
    pub tolerance: f64,
    pub within: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub verdicts: Vec<CoefficientVerdict>,
    pub summary: String,
}

impl ComparisonReport {
    pub fn all_within(&self) -> bool {
        self.verdicts.iter().all(|v| v.within)
    }
}

pub fn compare_to_reference(fit: &RegressionFit, reference: &RegressionFit, tolerances: &Tolerances) -> ComparisonReport {
    let fields = [
        ("slope", fit.slope, reference.slope, tolerances.slope),
        ("intercept", fit.intercept, reference.intercept, tolerances.intercept),
        ("mse", fit.mse, reference.mse, tolerances.mse),
    ];
    let verdicts: Vec<CoefficientVerdict> = fields
        .into_iter()
        .filter_map(|(name, observed, reference, tol)| {
            tol.map(|tolerance| CoefficientVerdict {
                name: name.to_string(),
                observed,
                reference,
                tolerance,
                within: (observed - reference).abs() <= tolerance,
            })
        })
        .collect();
    let mut summary = String::new();
    for v in &verdicts {
        let _ = writeln!(
            summary,
            "{:<10} observed {:>12.5} reference {:>12.5} (±{:.5}) {}",
            v.name,
            v.observed,
            v.reference,
            v.tolerance,
            if v.within { "within" } else { "OUTSIDE" }
        );
    }
    ComparisonReport { verdicts, summary }
}

/// A published regression line kept for side-by-side reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFit {
    pub name: String,
    pub x: String,
    pub y: String,
    pub unit: String,
    /// False when it is unclear what quantity the line describes.
    pub unit_known: bool,
    pub slope: f64,
    pub intercept: f64,
    pub mse: f64,
}

impl ReferenceFit {
    pub fn as_fit(&self) -> RegressionFit {
        RegressionFit { slope: self.slope, intercept: self.intercept, mse: self.mse, r_squared: f64::NAN, sample_count: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSet {
    pub status: String,
    pub fits: Vec<ReferenceFit>,
}

const REFERENCE_JSON: &str = include_str!("../data/reference_fits.json");

pub fn reference_fits() -> ReferenceSet {
    serde_json::from_str(REFERENCE_JSON).expect("bundled reference data parses")
}

/// Sweep dimension a fit runs along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Peers,
    LatencyMs,
    RateMbit,
    Loss,
    Pf,
}

impl Axis {
    pub const ALL: [Axis; 5] = [Axis::Peers, Axis::LatencyMs, Axis::RateMbit, Axis::Loss, Axis::Pf];

    pub fn value(&self, r: &RunMetrics) -> f64 {
        match self {
            Axis::Peers => r.n as f64,
            Axis::LatencyMs => r.latency_ms,
            Axis::RateMbit => r.rate_mbit,
            Axis::Loss => r.loss,
            Axis::Pf => r.pf as f64,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Axis::Peers => "peers",
            Axis::LatencyMs => "latency_ms",
            Axis::RateMbit => "rate_mbit",
            Axis::Loss => "loss",
            Axis::Pf => "pf",
        }
    }
}

/// Quantity being fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    DurationPerSessionMs,
    BytesPerPeer,
    Messages,
    Failures,
}

impl Metric {
    pub fn value(&self, r: &RunMetrics) -> f64 {
        match self {
            Metric::DurationPerSessionMs => r.duration_per_session_ms(),
            Metric::BytesPerPeer => r.bytes_per_peer,
            Metric::Messages => r.messages as f64,
            Metric::Failures => r.failures as f64,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Metric::DurationPerSessionMs => "duration_per_session_ms",
            Metric::BytesPerPeer => "bytes_per_peer",
            Metric::Messages => "messages",
            Metric::Failures => "failures",
        }
    }
}

/// A fit of `metric` along `axis` with every other parameter held fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisFit {
    pub axis: Axis,
    pub metric: Metric,
    /// The fixed values of the other parameters, e.g. `n=3 latency_ms=16`.
    pub scenario: String,
    /// Mean metric per axis value, ascending in x.
    pub points: Vec<(f64, f64)>,
    pub fit: RegressionFit,
}

/// Groups `rows` by every parameter except `axis`, averages the metric over
/// repetitions and fits a line wherever at least two x values exist.
pub fn fits_along(rows: &[RunMetrics], axis: Axis, metric: Metric) -> Vec<AxisFit> {
    let mut groups: BTreeMap<String, BTreeMap<u64, (f64, f64, usize)>> = BTreeMap::new();
    for r in rows {
        let scenario = Axis::ALL
            .iter()
            .filter(|a| **a != axis)
            .map(|a| format!("{}={}", a.name(), a.value(r)))
            .chain(std::iter::once(format!("sessions={}", r.sessions)))
            .collect::<Vec<_>>()
            .join(" ");
        let x = axis.value(r);
        let slot = groups.entry(scenario).or_default().entry(x.to_bits()).or_insert((x, 0.0, 0));
        slot.1 += metric.value(r);
        slot.2 += 1;
    }
    let mut out = Vec::new();
    for (scenario, by_x) in groups {
        let mut points: Vec<(f64, f64)> = by_x.into_values().map(|(x, sum, k)| (x, sum / k as f64)).collect();
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Ok(fit) = fit_linear(&points) {
            out.push(AxisFit { axis, metric, scenario, points, fit });
        }
    }
    out
}

/// Plain-text table of fits, one line each.
pub fn render_table(fits: &[AxisFit]) -> String {
    let mut s = format!(
        "{:<11} {:<24} {:>5} {:>14} {:>14} {:>12} {:>8}  {}\n",
        "axis", "metric", "n", "slope", "intercept", "mse", "r2", "scenario"
    );
    for f in fits {
        let _ = writeln!(
            s,
            "{:<11} {:<24} {:>5} {:>14.6} {:>14.6} {:>12.4} {:>8.5}  {}",
            f.axis.name(),
            f.metric.name(),
            f.fit.sample_count,
            f.fit.slope,
            f.fit.intercept,
            f.fit.mse,
            f.fit.r_squared,
            f.scenario
        );
    }
    s
}
