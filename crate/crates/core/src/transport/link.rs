use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TransportError;
use crate::SeededRng;

pub const NANOS_PER_MS: u64 = 1_000_000;

pub const DEFAULT_MTU_PAYLOAD: usize = 1460;
/// Ethernet 14 + IPv4 20 + TCP 20.
pub const DEFAULT_HEADER_OVERHEAD: usize = 54;
pub const DEFAULT_RATE_BPS: u64 = 1_000_000_000;

pub fn ms_to_nanos(ms: f64) -> u64 {
    (ms * NANOS_PER_MS as f64).round() as u64
}

pub fn nanos_to_ms(ns: u64) -> f64 {
    ns as f64 / NANOS_PER_MS as f64
}

/// Properties of one directed link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub one_way_latency_ns: u64,
    /// Bits per second; must be positive.
    pub rate_bps: u64,
    pub loss_prob: f64,
    pub mtu_payload: usize,
    pub header_overhead: usize,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            one_way_latency_ns: 0,
            rate_bps: DEFAULT_RATE_BPS,
            loss_prob: 0.0,
            mtu_payload: DEFAULT_MTU_PAYLOAD,
            header_overhead: DEFAULT_HEADER_OVERHEAD,
        }
    }
}

impl LinkParams {
    /// Builds a link from sweep-style parameters. `latency_ms` is the
    /// round-trip delay added to the link, split evenly over both directions.
    pub fn from_configured(latency_ms: f64, rate_mbit: f64, loss: f64) -> Result<Self, TransportError> {
        if !(latency_ms.is_finite() && latency_ms >= 0.0) {
            return Err(TransportError::InvalidLink(format!("latency {latency_ms} ms")));
        }
        if !(rate_mbit.is_finite() && rate_mbit > 0.0) {
            return Err(TransportError::InvalidLink(format!("rate {rate_mbit} Mbit/s")));
        }
        let link = Self {
            one_way_latency_ns: ms_to_nanos(latency_ms) / 2,
            rate_bps: (rate_mbit * 1e6).round() as u64,
            loss_prob: loss,
            ..Self::default()
        };
        link.validate()?;
        Ok(link)
    }

    pub fn validate(&self) -> Result<(), TransportError> {
        if self.rate_bps == 0 {
            return Err(TransportError::InvalidLink("rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.loss_prob) {
            return Err(TransportError::InvalidLink(format!("loss probability {}", self.loss_prob)));
        }
        if self.mtu_payload == 0 {
            return Err(TransportError::InvalidLink("mtu payload must be positive".into()));
        }
        Ok(())
    }

    /// Time to clock `bytes` onto the wire, rounded to the nearest nanosecond.
    pub fn serialization_ns(&self, bytes: usize) -> u64 {
        let bits = bytes as u128 * 8;
        let rate = self.rate_bps as u128;
        ((bits * 1_000_000_000 + rate / 2) / rate) as u64
    }

    pub fn packet_count(&self, size: usize) -> usize {
        size.div_ceil(self.mtu_payload).max(1)
    }

    /// Payload bytes carried by each packet of a `size`-byte unit.
    pub fn packet_payloads(&self, size: usize) -> Vec<usize> {
        let k = self.packet_count(size);
        (0..k)
            .map(|i| {
                if i + 1 < k {
                    self.mtu_payload
                } else {
                    size - self.mtu_payload * (k - 1)
                }
            })
            .collect()
    }

    pub fn ack_bytes(&self) -> usize {
        self.header_overhead
    }
}

/// Stop-and-wait transfer of `size` payload bytes over an idle link: every
/// packet after the first is sent only once the previous one is acknowledged.
///
/// `latency * (2k - 1)` plus serialization of the `k` data packets and of the
/// `k - 1` intermediate acknowledgements.
pub fn transfer_time(size: usize, link: &LinkParams) -> u64 {
    assert!(size > 0, "empty transfer");
    let payloads = link.packet_payloads(size);
    let k = payloads.len() as u64;
    let data: u64 = payloads
        .iter()
        .map(|p| link.serialization_ns(p + link.header_overhead))
        .sum();
    let acks = (k - 1) * link.serialization_ns(link.ack_bytes());
    link.one_way_latency_ns * (2 * k - 1) + data + acks
}

/// Timer and retry rules shared by the simulator and the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetransmitPolicy {
    pub max_attempts: u32,
    /// Cap on the exponential backoff multiplier.
    pub backoff_cap: u32,
    /// Added to the round trip to form the base timeout.
    pub timer_floor_ns: u64,
    /// Round barrier timeout, in multiples of the base round trip.
    pub barrier_factor: u32,
}

impl Default for RetransmitPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 50,
            backoff_cap: 8,
            timer_floor_ns: NANOS_PER_MS,
            barrier_factor: 10,
        }
    }
}

impl RetransmitPolicy {
    /// Timeout before retransmitting after attempt number `attempt` (1-based):
    /// `(2 * one_way + floor) * min(2^(attempt-1), cap)`.
    pub fn rto(&self, link: &LinkParams, attempt: u32) -> u64 {
        let base = 2 * link.one_way_latency_ns + self.timer_floor_ns;
        let mult = 1u64
            .checked_shl(attempt.saturating_sub(1))
            .unwrap_or(u64::MAX)
            .min(u64::from(self.backoff_cap));
        base * mult
    }

    /// How long a receiver waits for an expected message once it is on the
    /// wire: `factor * (round trip + floor + serialization of the message)`.
    pub fn barrier_timeout(&self, link: &LinkParams, size: usize) -> u64 {
        let rtt = 2 * link.one_way_latency_ns + self.timer_floor_ns;
        let ser = link.serialization_ns(size + link.header_overhead);
        u64::from(self.barrier_factor) * (rtt + ser)
    }
}

/// Sends one packet until it gets through, each attempt lost independently
/// with `link.loss_prob`. Returns the number of attempts made.
pub fn lossy_transmit(
    link: &LinkParams,
    policy: &RetransmitPolicy,
    rng: &mut SeededRng,
) -> Result<u32, TransportError> {
    for attempt in 1..=policy.max_attempts {
        if !is_lost(link, rng) {
            return Ok(attempt);
        }
    }
    Err(TransportError::DeliveryFailed { attempts: policy.max_attempts })
}

pub(crate) fn is_lost(link: &LinkParams, rng: &mut SeededRng) -> bool {
    link.loss_prob > 0.0 && rng.gen::<f64>() < link.loss_prob
}
