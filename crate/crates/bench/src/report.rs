//! Fit report over a results CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use smc_core::analysis::{
    compare_to_reference, fits_along, reference_fits, render_table, Axis, AxisFit, ComparisonReport, Metric,
    ReferenceFit, RegressionFit, RunMetrics, Tolerances,
};
use smc_core::costmodel::{ttp_total_cost, TtpModel};
use smc_core::transport::{LinkParams, FRAME_HEADER_LEN};
use smc_core::PrimeModulus;

/// Measured, predicted and trusted-third-party durations of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub n: usize,
    pub latency_ms: f64,
    pub rate_mbit: f64,
    pub loss: f64,
    pub pf: usize,
    pub sessions: u32,
    pub repetitions: usize,
    pub measured_ms_per_session: f64,
    pub predicted_ms_per_session: f64,
    pub ttp_ms_per_session: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceComparison {
    pub reference: ReferenceFit,
    pub scenario: String,
    /// The observed fit, converted to the reference's unit.
    pub observed: RegressionFit,
    pub comparison: ComparisonReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: usize,
    pub fits: Vec<AxisFit>,
    pub baselines: Vec<Baseline>,
    /// Published lines shown next to ours; informational only.
    pub reference_status: String,
    pub references: Vec<ReferenceComparison>,
}

const FIT_METRICS: [Metric; 4] =
    [Metric::DurationPerSessionMs, Metric::BytesPerPeer, Metric::Messages, Metric::Failures];

/// Time for one device to upload a value to a trusted server and get the
/// result back.
pub fn ttp_ms(n: usize, link: &LinkParams, modulus: &PrimeModulus) -> f64 {
    let model = TtpModel::over_link(n, link, FRAME_HEADER_LEN + modulus.byte_len());
    ttp_total_cost(&model) as f64 / 1e6
}

pub fn emit_report(rows: &[RunMetrics]) -> Report {
    let mut fits = Vec::new();
    for axis in Axis::ALL {
        for metric in FIT_METRICS {
            fits.extend(fits_along(rows, axis, metric));
        }
    }

    let modulus = PrimeModulus::default();
    let mut groups: BTreeMap<[u64; 6], Vec<&RunMetrics>> = BTreeMap::new();
    for r in rows {
        let key = [r.n as u64, r.latency_ms.to_bits(), r.rate_mbit.to_bits(), r.loss.to_bits(), r.pf as u64, u64::from(r.sessions)];
        groups.entry(key).or_default().push(r);
    }
    let baselines = groups
        .into_values()
        .map(|g| {
            let r = g[0];
            let mean = |f: &dyn Fn(&RunMetrics) -> f64| g.iter().map(|r| f(r)).sum::<f64>() / g.len() as f64;
            let ttp = LinkParams::from_configured(r.latency_ms, r.rate_mbit, 0.0)
                .map_or(f64::NAN, |link| ttp_ms(r.n, &link, &modulus));
            Baseline {
                n: r.n,
                latency_ms: r.latency_ms,
                rate_mbit: r.rate_mbit,
                loss: r.loss,
                pf: r.pf,
                sessions: r.sessions,
                repetitions: g.len(),
                measured_ms_per_session: mean(&|r| r.duration_per_session_ms()),
                predicted_ms_per_session: mean(&|r| r.predicted_ms / f64::from(r.sessions)),
                ttp_ms_per_session: ttp,
            }
        })
        .collect();

    let set = reference_fits();
    let mut references = Vec::new();
    for reference in set.fits {
        let (axis, metric, scale) = match reference.name.as_str() {
            "duration_vs_peers" => (Axis::Peers, Metric::DurationPerSessionMs, 1.0),
            "bytes_vs_peers" => (Axis::Peers, Metric::BytesPerPeer, 1e-6),
            "duration_vs_latency" => (Axis::LatencyMs, Metric::DurationPerSessionMs, 1.0),
            _ => continue,
        };
        let tolerances = Tolerances {
            slope: Some(0.1 * reference.slope.abs()),
            intercept: Some(0.1 * reference.intercept.abs()),
            mse: None,
        };
        for f in fits.iter().filter(|f| f.axis == axis && f.metric == metric) {
            let observed = RegressionFit {
                slope: f.fit.slope * scale,
                intercept: f.fit.intercept * scale,
                mse: f.fit.mse * scale * scale,
                ..f.fit
            };
            let comparison = compare_to_reference(&observed, &reference.as_fit(), &tolerances);
            references.push(ReferenceComparison {
                reference: reference.clone(),
                scenario: f.scenario.clone(),
                observed,
                comparison,
            });
        }
    }

    Report { rows: rows.len(), fits, baselines, reference_status: set.status, references }
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn render_text(&self) -> String {
        let mut s = format!("{} result rows\n\nfits\n", self.rows);
        s.push_str(&render_table(&self.fits));
        let _ = writeln!(
            s,
            "\nper-session duration (ms)\n{:>3} {:>8} {:>9} {:>6} {:>5} {:>5} {:>12} {:>12} {:>10}",
            "n", "lat_ms", "rate_mbit", "loss", "pf", "reps", "measured", "predicted", "ttp"
        );
        for b in &self.baselines {
            let _ = writeln!(
                s,
                "{:>3} {:>8} {:>9} {:>6} {:>5} {:>5} {:>12.4} {:>12.4} {:>10.4}",
                b.n, b.latency_ms, b.rate_mbit, b.loss, b.pf, b.repetitions,
                b.measured_ms_per_session, b.predicted_ms_per_session, b.ttp_ms_per_session
            );
        }
        if !self.references.is_empty() {
            let _ = writeln!(s, "\nreference lines ({})", self.reference_status);
            for r in &self.references {
                let unit = if r.reference.unit_known { r.reference.unit.clone() } else { format!("{}, unit unclear", r.reference.unit) };
                let _ = writeln!(s, "{} [{}] {}", r.reference.name, unit, r.scenario);
                s.push_str(&r.comparison.summary);
            }
        }
        s
    }
}
