use std::path::Path;

use serde::{Deserialize, Serialize};

use super::link::{LinkParams, DEFAULT_HEADER_OVERHEAD, DEFAULT_MTU_PAYLOAD};
use super::sim::NetworkConfig;
use super::TransportError;

/// Simulator scenario file:
/// `{"peers": 3, "latency_ms": 50, "rate_mbit": 100, "loss": 0.01, "mtu": 1460, "header": 54}`.
///
/// `latency_ms` is the configured round-trip delay; each direction gets half.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub peers: usize,
    #[serde(default)]
    pub latency_ms: f64,
    #[serde(default = "default_rate")]
    pub rate_mbit: f64,
    #[serde(default)]
    pub loss: f64,
    #[serde(default = "default_mtu")]
    pub mtu: usize,
    #[serde(default = "default_header")]
    pub header: usize,
}

fn default_rate() -> f64 {
    1000.0
}

fn default_mtu() -> usize {
    DEFAULT_MTU_PAYLOAD
}

fn default_header() -> usize {
    DEFAULT_HEADER_OVERHEAD
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, TransportError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| TransportError::Scenario(e.to_string()))?;
        s.link_params()?;
        if s.peers < 2 {
            return Err(TransportError::Scenario(format!("{} peers", s.peers)));
        }
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TransportError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn link_params(&self) -> Result<LinkParams, TransportError> {
        let mut link = LinkParams::from_configured(self.latency_ms, self.rate_mbit, self.loss)?;
        link.mtu_payload = self.mtu;
        link.header_overhead = self.header;
        link.validate()?;
        Ok(link)
    }

    pub fn network_config(&self, seed: u64) -> Result<NetworkConfig, TransportError> {
        Ok(NetworkConfig::new(self.peers, self.link_params()?).with_seed(seed))
    }
}
