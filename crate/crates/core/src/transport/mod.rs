//! Message movement: a deterministic simulated network and a TCP full mesh.
//! Both count traffic with the same [`TransportCounters`].

mod link;
mod message;
mod scenario;
mod sim;
pub mod socket;

use thiserror::Error;

pub use link::{
    lossy_transmit, ms_to_nanos, nanos_to_ms, transfer_time, LinkParams, RetransmitPolicy,
    DEFAULT_HEADER_OVERHEAD, DEFAULT_MTU_PAYLOAD, DEFAULT_RATE_BPS, NANOS_PER_MS,
};
pub use message::{combine_pending, Message, MessageId, Pending, TransportCounters, WireUnit, FRAME_HEADER_LEN};
pub use scenario::Scenario;
pub use sim::{
    FailureReason, NetEvent, NetworkConfig, SimEvent, SimEventKind, SimulatedNetwork, DEFAULT_WINDOW,
};
pub use socket::{SocketConfig, SocketEndpoint};

/// 1-based party index.
pub type PartyId = usize;
pub type SessionId = u32;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("unknown party {0}")]
    UnknownParty(PartyId),
    #[error("party {0} cannot send to itself")]
    SelfSend(PartyId),
    #[error("message payload is empty")]
    EmptyPayload,
    #[error("invalid link parameters: {0}")]
    InvalidLink(String),
    #[error("delivery failed after {attempts} attempts")]
    DeliveryFailed { attempts: u32 },
    #[error("startup failed: {0}")]
    Startup(String),
    #[error("protocol error on link with party {peer}: {reason}")]
    Protocol { peer: PartyId, reason: String },
    #[error("timed out waiting for a message")]
    Timeout,
    #[error("link to party {0} is closed")]
    Closed(PartyId),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
