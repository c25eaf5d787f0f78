//! GPS traces and the distance stream each device feeds into the sum.

use std::fs;
use std::path::{Path, PathBuf};

use smc_core::{FieldElement, PrimeModulus};
use thiserror::Error;

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Distances enter the field in centimeters.
pub const FIXED_POINT_SCALE: f64 = 100.0;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{}: no valid rows", .0.display())]
    Empty(PathBuf),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("no trace files in {}", .0.display())]
    NoTraces(PathBuf),
    #[error("need at least two points for a distance, trace {0} has {1}")]
    TooShort(String, usize),
    #[error("distance {meters} m is outside [0, {bound}) m")]
    OutOfRange { meters: f64, bound: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpsPoint {
    pub timestamp: f64,
    pub lat: f64,
    pub lon: f64,
}

/// A row that failed validation.
#[derive(Debug, Clone, PartialEq)]
pub struct RejectedRow {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpsTrace {
    pub name: String,
    pub points: Vec<GpsPoint>,
    pub rejected: Vec<RejectedRow>,
}

impl GpsTrace {
    /// Parses `timestamp,lat,lon` rows. An optional header line is skipped;
    /// rows that do not parse, leave the coordinate ranges or do not advance
    /// the timestamp are collected in `rejected`.
    pub fn parse(name: &str, text: &str) -> Self {
        let mut points: Vec<GpsPoint> = Vec::new();
        let mut rejected = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || (i == 0 && line.starts_with(|c: char| c.is_ascii_alphabetic())) {
                continue;
            }
            match parse_row(line) {
                Ok(p) if points.last().is_some_and(|q| p.timestamp <= q.timestamp) => {
                    rejected.push(RejectedRow { line: i + 1, reason: format!("timestamp {} does not increase", p.timestamp) })
                }
                Ok(p) => points.push(p),
                Err(reason) => rejected.push(RejectedRow { line: i + 1, reason }),
            }
        }
        Self { name: name.to_string(), points, rejected }
    }

    pub fn load(path: &Path) -> Result<Self, TraceError> {
        let text = fs::read_to_string(path).map_err(|source| TraceError::Io { path: path.to_path_buf(), source })?;
        let name = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        let trace = Self::parse(&name, &text);
        if trace.points.is_empty() {
            return Err(TraceError::Empty(path.to_path_buf()));
        }
        Ok(trace)
    }

    /// Great-circle distance between successive points, in meters.
    pub fn distances(&self) -> Result<Vec<f64>, TraceError> {
        if self.points.len() < 2 {
            return Err(TraceError::TooShort(self.name.clone(), self.points.len()));
        }
        Ok(self.points.windows(2).map(|w| haversine(&w[0], &w[1])).collect())
    }
}

fn parse_row(line: &str) -> Result<GpsPoint, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 3 {
        return Err(format!("expected 3 columns, found {}", fields.len()));
    }
    let num = |i: usize, what: &str| -> Result<f64, String> {
        fields[i]
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("bad {what} {:?}", fields[i]))
    };
    let (timestamp, lat, lon) = (num(0, "timestamp")?, num(1, "latitude")?, num(2, "longitude")?);
    if lat.abs() > 90.0 {
        return Err(format!("latitude {lat} out of range"));
    }
    if lon.abs() > 180.0 {
        return Err(format!("longitude {lon} out of range"));
    }
    Ok(GpsPoint { timestamp, lat, lon })
}

/// Haversine distance on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine(a: &GpsPoint, b: &GpsPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Every `*.csv` file in `dir`, sorted by file name.
pub fn load_traces(dir: &Path) -> Result<Vec<GpsTrace>, TraceError> {
    let entries = fs::read_dir(dir).map_err(|source| TraceError::Io { path: dir.to_path_buf(), source })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(TraceError::NoTraces(dir.to_path_buf()));
    }
    paths.iter().map(|p| GpsTrace::load(p)).collect()
}

const BUNDLED: [(&str, &str); 5] = [
    ("donor1", include_str!("../data/traces/donor1.csv")),
    ("donor2", include_str!("../data/traces/donor2.csv")),
    ("donor3", include_str!("../data/traces/donor3.csv")),
    ("donor4", include_str!("../data/traces/donor4.csv")),
    ("donor5", include_str!("../data/traces/donor5.csv")),
];

/// The five synthetic traces shipped with the harness.
pub fn bundled_traces() -> Vec<GpsTrace> {
    BUNDLED.iter().map(|(name, text)| GpsTrace::parse(name, text)).collect()
}

/// Assigns a trace to each of `parties` parties, reusing traces round-robin
/// when there are fewer traces than parties.
pub fn traces_for_parties(traces: &[GpsTrace], parties: usize) -> Vec<&GpsTrace> {
    (0..parties).map(|i| &traces[i % traces.len()]).collect()
}

/// Largest distance that can be summed `peers * sessions` times without
/// wrapping around the modulus.
pub fn encoding_bound(modulus: &PrimeModulus, peers: usize, sessions: u32) -> f64 {
    modulus.value() as f64 / (FIXED_POINT_SCALE * peers as f64 * f64::from(sessions.max(1)))
}

/// Fixed-point encoding in centimeters, rounding half away from zero.
pub fn encode_distance(meters: f64, modulus: &PrimeModulus, peers: usize, sessions: u32) -> Result<FieldElement, TraceError> {
    let bound = encoding_bound(modulus, peers, sessions);
    if !(0.0..bound).contains(&meters) {
        return Err(TraceError::OutOfRange { meters, bound });
    }
    Ok(modulus.element((meters * FIXED_POINT_SCALE).round() as u128))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(lat: f64, lon: f64) -> GpsPoint {
        GpsPoint { timestamp: 0.0, lat, lon }
    }

    #[test]
    fn haversine_reference_distances() {
        assert_eq!(haversine(&pt(12.5, 7.25), &pt(12.5, 7.25)), 0.0);
        let degree = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        assert!((haversine(&pt(0.0, 0.0), &pt(0.0, 1.0)) - 111_194.9).abs() < 0.1);
        assert!((haversine(&pt(0.0, 0.0), &pt(0.0, 1.0)) - degree).abs() < 1e-6);
        let antipodal = haversine(&pt(0.0, 0.0), &pt(0.0, 180.0));
        assert!((antipodal - std::f64::consts::PI * EARTH_RADIUS_M).abs() < 1.0);
        assert!((haversine(&pt(90.0, 0.0), &pt(-90.0, 0.0)) - std::f64::consts::PI * EARTH_RADIUS_M).abs() < 1.0);
    }

    #[test]
    fn parse_rejects_bad_rows_and_continues() {
        let text = "timestamp,lat,lon\n1,10.0,20.0\n2,91.0,20.0\n3,10.0,181\nx,1,2\n4,1,2,3\n4,10.001,20.0\n4,10.0,20.0\n";
        let t = GpsTrace::parse("t", text);
        assert_eq!(t.points.len(), 2);
        let lines: Vec<_> = t.rejected.iter().map(|r| r.line).collect();
        assert_eq!(lines, vec![3, 4, 5, 6, 8]);
        assert!(t.rejected[0].reason.contains("latitude"));
        assert!(t.rejected[4].reason.contains("does not increase"));
    }

    #[test]
    fn empty_file_is_an_error_naming_it() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("blank.csv");
        fs::write(&path, "timestamp,lat,lon\n").unwrap();
        let err = load_traces(dir.path()).unwrap_err();
        assert!(err.to_string().contains("blank.csv"), "{err}");
        let none = tempfile::tempdir().unwrap();
        assert!(matches!(load_traces(none.path()), Err(TraceError::NoTraces(_))));
    }

    #[test]
    fn round_robin_assignment() {
        let traces = bundled_traces();
        let assigned = traces_for_parties(&traces, 8);
        let names: Vec<_> = assigned.iter().map(|t| t.name.as_str()).collect();
        assert_eq!(names, ["donor1", "donor2", "donor3", "donor4", "donor5", "donor1", "donor2", "donor3"]);
    }

    #[test]
    fn bundled_traces_are_clean() {
        for t in bundled_traces() {
            assert!(t.rejected.is_empty(), "{}", t.name);
            assert!(t.points.len() > 1000);
            let d = t.distances().unwrap();
            assert_eq!(d.len(), t.points.len() - 1);
            assert!(d.iter().all(|m| m.is_finite() && *m >= 0.0));
        }
    }

    #[test]
    fn distances_need_two_points() {
        let t = GpsTrace::parse("one", "1,0,0\n");
        assert!(matches!(t.distances(), Err(TraceError::TooShort(_, 1))));
    }

    #[test]
    fn fixed_point_encoding() {
        let f = PrimeModulus::default();
        assert_eq!(encode_distance(0.0, &f, 3, 1000).unwrap().value(), 0);
        assert_eq!(encode_distance(12.345, &f, 3, 1000).unwrap().value(), 1235);
        assert_eq!(encode_distance(0.005, &f, 3, 1000).unwrap().value(), 1);
        let bound = encoding_bound(&f, 15, 1000);
        assert!(encode_distance(bound * 1.01, &f, 15, 1000).is_err());
        assert!(encode_distance(-1.0, &f, 3, 1).is_err());
        assert!(encode_distance(f64::NAN, &f, 3, 1).is_err());
    }
}
