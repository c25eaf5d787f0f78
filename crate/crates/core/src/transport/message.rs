use serde::{Deserialize, Serialize};

use super::{PartyId, SessionId};

/// Bytes of the length prefix in front of every wire unit.
pub const FRAME_HEADER_LEN: usize = 4;

pub type MessageId = u64;

/// One application message from `sender` to `receiver`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub sender: PartyId,
    pub receiver: PartyId,
    pub session: SessionId,
    pub round: u16,
    pub payload: Vec<u8>,
}

/// Per-party traffic totals. All fields only ever grow.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportCounters {
    /// Data and acknowledgement packets, headers included.
    pub bytes_sent: u64,
    pub messages_sent: u64,
    /// Data packets, retransmissions included.
    pub packets_sent: u64,
    pub acks_sent: u64,
    pub retransmissions: u64,
    /// Messages that travelled inside another message's wire unit.
    pub combined_messages: u64,
    pub messages_received: u64,
}

impl TransportCounters {
    pub fn merge(&mut self, other: &TransportCounters) {
        self.bytes_sent += other.bytes_sent;
        self.messages_sent += other.messages_sent;
        self.packets_sent += other.packets_sent;
        self.acks_sent += other.acks_sent;
        self.retransmissions += other.retransmissions;
        self.combined_messages += other.combined_messages;
        self.messages_received += other.messages_received;
    }
}

/// A message waiting in a sender's outbound queue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pending {
    pub id: MessageId,
    pub message: Message,
}

/// Messages framed together behind one length prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireUnit {
    pub session: SessionId,
    pub messages: Vec<Pending>,
}

impl WireUnit {
    pub fn size(&self) -> usize {
        FRAME_HEADER_LEN + self.messages.iter().map(|m| m.message.payload.len()).sum::<usize>()
    }

    pub fn ids(&self) -> Vec<MessageId> {
        self.messages.iter().map(|m| m.id).collect()
    }
}

/// Merges the queued messages for one receiver into wire units: one unit per
/// session, in order of each session's first message. Messages of different
/// sessions are never merged.
pub fn combine_pending(queue: impl IntoIterator<Item = Pending>) -> Vec<WireUnit> {
    let mut units: Vec<WireUnit> = Vec::new();
    for pending in queue {
        let session = pending.message.session;
        match units.iter_mut().find(|u| u.session == session) {
            Some(unit) => unit.messages.push(pending),
            None => units.push(WireUnit { session, messages: vec![pending] }),
        }
    }
    units
}
