use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smc_core::engine::{ProtocolKind, ProtocolProgram};
use smc_core::ThresholdConfig;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),
    #[error("config file {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config file {}: {source}", path.display())]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("plan file {}: {reason}", path.display())]
    Plan { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Simulate,
    Sockets,
}

impl std::str::FromStr for Mode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simulate" => Ok(Mode::Simulate),
            "sockets" => Ok(Mode::Sockets),
            other => Err(ConfigError::Invalid(format!("unknown mode {other:?}"))),
        }
    }
}

/// A built-in protocol or the path of a plan file.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProtocolChoice {
    Builtin(ProtocolKind),
    Plan(PathBuf),
}

impl ProtocolChoice {
    pub fn parse(s: &str) -> Self {
        match s.parse::<ProtocolKind>() {
            Ok(kind) => ProtocolChoice::Builtin(kind),
            Err(_) => ProtocolChoice::Plan(PathBuf::from(s)),
        }
    }

    pub fn is_sum(&self) -> bool {
        matches!(self, ProtocolChoice::Builtin(ProtocolKind::Sum))
    }

    pub fn build(&self, n: usize) -> Result<ProtocolProgram, ConfigError> {
        let cfg = ThresholdConfig::with_default_threshold(n).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        match self {
            ProtocolChoice::Builtin(kind) => Ok(kind.build(&cfg)),
            ProtocolChoice::Plan(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| ConfigError::Plan { path: path.clone(), reason: e.to_string() })?;
                ProtocolProgram::parse_plan(&text, &cfg)
                    .map_err(|e| ConfigError::Plan { path: path.clone(), reason: e.to_string() })
            }
        }
    }
}

impl Default for ProtocolChoice {
    fn default() -> Self {
        ProtocolChoice::Builtin(ProtocolKind::Sum)
    }
}

/// Every combination of the listed values is one sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub peers: Vec<usize>,
    pub latency_ms: Vec<f64>,
    pub rate_mbit: Vec<f64>,
    pub loss: Vec<f64>,
    pub pf: Vec<usize>,
    pub sessions: u32,
    pub reps: u32,
    pub seed: u64,
    pub mode: Mode,
    pub protocol: ProtocolChoice,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            peers: vec![3, 5, 7, 9, 11, 13, 15],
            latency_ms: vec![0.0, 16.0, 50.0, 200.0, 500.0],
            rate_mbit: vec![1.0, 10.0, 100.0, 1000.0],
            loss: (0..=10).map(|i| f64::from(i) / 100.0).collect(),
            pf: vec![1],
            sessions: 1000,
            reps: 50,
            seed: 1,
            mode: Mode::Simulate,
            protocol: ProtocolChoice::default(),
        }
    }
}

/// One point of the parameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub n: usize,
    pub latency_ms: f64,
    pub rate_mbit: f64,
    pub loss: f64,
    pub pf: usize,
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        for (name, empty) in [
            ("peers", self.peers.is_empty()),
            ("latency_ms", self.latency_ms.is_empty()),
            ("rate_mbit", self.rate_mbit.is_empty()),
            ("loss", self.loss.is_empty()),
            ("pf", self.pf.is_empty()),
        ] {
            if empty {
                return bad(format!("{name} list is empty"));
            }
        }
        if let Some(n) = self.peers.iter().find(|&&n| ThresholdConfig::with_default_threshold(n).is_err()) {
            return bad(format!("unsupported peer count {n}"));
        }
        if let Some(l) = self.latency_ms.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return bad(format!("latency {l} ms"));
        }
        if let Some(r) = self.rate_mbit.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return bad(format!("rate {r} Mbit/s"));
        }
        if let Some(p) = self.loss.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return bad(format!("loss probability {p}"));
        }
        if self.pf.contains(&0) {
            return bad("pf must be positive".into());
        }
        if self.sessions == 0 || self.reps == 0 {
            return bad("sessions and reps must be positive".into());
        }
        let max_pf = *self.pf.iter().max().expect("non-empty");
        if (self.sessions as usize) < max_pf {
            return bad(format!("{} sessions per run is fewer than pf {max_pf}", self.sessions));
        }
        if self.mode == Mode::Sockets && (self.latency_ms.iter().any(|l| *l != 0.0) || self.loss.iter().any(|p| *p != 0.0)) {
            return bad("sockets mode runs on loopback and cannot add latency or loss; use latency_ms [0] and loss [0]".into());
        }
        for &n in &self.peers {
            self.protocol.build(n)?;
        }
        Ok(())
    }

    /// Cells in sweep order: peers outermost, then latency, rate, loss, pf.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &n in &self.peers {
            for &latency_ms in &self.latency_ms {
                for &rate_mbit in &self.rate_mbit {
                    for &loss in &self.loss {
                        for &pf in &self.pf {
                            out.push(Cell { n, latency_ms, rate_mbit, loss, pf });
                        }
                    }
                }
            }
        }
        out
    }

    /// Identifies the grid and seed, so a state file is only resumed by the
    /// sweep that wrote it.
    pub fn fingerprint(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
