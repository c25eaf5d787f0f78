//! Deterministic discrete-event network.
//!
//! Every directed link has a FIFO transmitter (rate-limited serialization),
//! a fixed one-way propagation delay and independent per-packet loss. Queued
//! messages of the same session to the same receiver are framed together
//! when the link picks them up. A wire unit larger than one MTU is sent
//! stop-and-wait: the next packet leaves once the previous one is
//! acknowledged. At most `window` wire units may be unacknowledged on a link
//! at any time.
//!
//! Time is kept in integer nanoseconds; ties in the event queue are broken by
//! insertion order, so a run is a pure function of its seed and inputs.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};

use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use super::link::{is_lost, LinkParams, RetransmitPolicy};
use super::message::{combine_pending, Message, MessageId, Pending, TransportCounters, WireUnit};
use super::{PartyId, SessionId, TransportError};
use crate::SeededRng;

/// In-flight wire units per directed link.
pub const DEFAULT_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub parties: usize,
    pub link: LinkParams,
    pub policy: RetransmitPolicy,
    pub window: usize,
    pub seed: u64,
    pub record_log: bool,
}

impl NetworkConfig {
    pub fn new(parties: usize, link: LinkParams) -> Self {
        Self {
            parties,
            link,
            policy: RetransmitPolicy::default(),
            window: DEFAULT_WINDOW,
            seed: 0,
            record_log: false,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureReason {
    /// The barrier timeout expired while the unit was being retransmitted.
    Timeout,
    /// The retransmission cap was reached.
    AttemptsExhausted,
}

/// What the simulator reports to the layer above.
#[derive(Debug, Clone, PartialEq)]
pub enum NetEvent {
    Delivered(Message),
    /// Every packet of the unit carrying these messages was acknowledged.
    Acknowledged(Vec<MessageId>),
    Failed {
        messages: Vec<Message>,
        reason: FailureReason,
    },
    Timer(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimEventKind {
    Flush,
    PacketArrival,
    AckArrival,
    RetransmitTimer,
    Delivery,
    Timeout,
    Timer,
}

/// One processed event, kept when `record_log` is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimEvent {
    pub time: u64,
    pub kind: SimEventKind,
    /// Wire unit id, message id or timer token, depending on `kind`.
    pub subject: u64,
}

#[derive(Debug)]
enum Internal {
    Flush { from: PartyId, to: PartyId },
    PacketArrival { unit: u64, packet: usize },
    AckArrival { unit: u64, packet: usize },
    Retransmit { unit: u64, packet: usize, attempt: u32 },
    GiveUp { unit: u64, reason: FailureReason },
    Timer(u64),
}

struct Scheduled {
    time: u64,
    seq: u64,
    event: Internal,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

struct LinkState {
    params: LinkParams,
    tx_free_at: u64,
    buffer: Vec<Pending>,
    flush_pending: bool,
    in_flight: usize,
}

struct Unit {
    from: PartyId,
    to: PartyId,
    session: SessionId,
    messages: Vec<Pending>,
    payloads: Vec<usize>,
    size: usize,
    deadline: Option<u64>,
}

pub struct SimulatedNetwork {
    parties: usize,
    policy: RetransmitPolicy,
    window: usize,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Scheduled>,
    links: Vec<LinkState>,
    units: HashMap<u64, Unit>,
    next_unit: u64,
    next_message: MessageId,
    rng: SeededRng,
    counters: Vec<TransportCounters>,
    session_counters: BTreeMap<(SessionId, PartyId), TransportCounters>,
    ready: VecDeque<NetEvent>,
    delivered: Vec<(u64, Message)>,
    failures: Vec<(u64, Vec<Message>, FailureReason)>,
    log: Option<Vec<SimEvent>>,
}

impl SimulatedNetwork {
    pub fn new(config: NetworkConfig) -> Result<Self, TransportError> {
        config.link.validate()?;
        if config.parties < 2 {
            return Err(TransportError::InvalidLink(format!("{} parties", config.parties)));
        }
        if config.window == 0 {
            return Err(TransportError::InvalidLink("window must be positive".into()));
        }
        let n = config.parties;
        let links = (0..n * n)
            .map(|_| LinkState {
                params: config.link,
                tx_free_at: 0,
                buffer: Vec::new(),
                flush_pending: false,
                in_flight: 0,
            })
            .collect();
        Ok(Self {
            parties: n,
            policy: config.policy,
            window: config.window,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            links,
            units: HashMap::new(),
            next_unit: 0,
            next_message: 0,
            rng: SeededRng::seed_from_u64(config.seed),
            counters: vec![TransportCounters::default(); n],
            session_counters: BTreeMap::new(),
            ready: VecDeque::new(),
            delivered: Vec::new(),
            failures: Vec::new(),
            log: config.record_log.then(Vec::new),
        })
    }

    pub fn parties(&self) -> usize {
        self.parties
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn policy(&self) -> &RetransmitPolicy {
        &self.policy
    }

    /// Overrides the parameters of the directed link `from -> to`.
    pub fn set_link(&mut self, from: PartyId, to: PartyId, params: LinkParams) -> Result<(), TransportError> {
        self.check_pair(from, to)?;
        params.validate()?;
        let idx = self.index(from, to);
        self.links[idx].params = params;
        Ok(())
    }

    pub fn link(&self, from: PartyId, to: PartyId) -> &LinkParams {
        &self.links[self.index(from, to)].params
    }

    pub fn counters(&self, party: PartyId) -> TransportCounters {
        self.counters[party - 1]
    }

    pub fn all_counters(&self) -> &[TransportCounters] {
        &self.counters
    }

    /// Per-party counters restricted to one session.
    pub fn session_counters(&self, session: SessionId) -> Vec<TransportCounters> {
        (1..=self.parties)
            .map(|p| self.session_counters.get(&(session, p)).copied().unwrap_or_default())
            .collect()
    }

    pub fn event_log(&self) -> Option<&[SimEvent]> {
        self.log.as_deref()
    }

    /// Messages delivered by [`Self::run_until_idle`], with arrival times.
    pub fn take_delivered(&mut self) -> Vec<(u64, Message)> {
        std::mem::take(&mut self.delivered)
    }

    pub fn failures(&self) -> &[(u64, Vec<Message>, FailureReason)] {
        &self.failures
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty() && self.ready.is_empty()
    }

    /// Hands a message to the sender's outbound queue. Returns immediately;
    /// the message leaves once the link picks it up.
    pub fn send(&mut self, message: Message) -> Result<MessageId, TransportError> {
        self.check_pair(message.sender, message.receiver)?;
        if message.payload.is_empty() {
            return Err(TransportError::EmptyPayload);
        }
        let id = self.next_message;
        self.next_message += 1;
        let (from, to, session) = (message.sender, message.receiver, message.session);
        self.counters[from - 1].messages_sent += 1;
        self.session_counter(session, from).messages_sent += 1;
        let idx = self.index(from, to);
        let link = &mut self.links[idx];
        link.buffer.push(Pending { id, message });
        if !link.flush_pending {
            link.flush_pending = true;
            self.schedule(self.now, Internal::Flush { from, to });
        }
        Ok(id)
    }

    /// Requests a [`NetEvent::Timer`] carrying `token` at absolute time `at`.
    pub fn schedule_timer(&mut self, at: u64, token: u64) {
        self.schedule(at.max(self.now), Internal::Timer(token));
    }

    /// Advances to the next event that concerns the layer above.
    pub fn next_event(&mut self) -> Option<(u64, NetEvent)> {
        loop {
            if let Some(ev) = self.ready.pop_front() {
                return Some((self.now, ev));
            }
            let Scheduled { time, event, .. } = self.queue.pop()?;
            debug_assert!(time >= self.now);
            self.now = time;
            self.handle(event);
        }
    }

    /// Processes the queue to exhaustion and returns the final time.
    pub fn run_until_idle(&mut self) -> u64 {
        while let Some((time, ev)) = self.next_event() {
            match ev {
                NetEvent::Delivered(m) => self.delivered.push((time, m)),
                NetEvent::Failed { messages, reason } => self.failures.push((time, messages, reason)),
                NetEvent::Acknowledged(_) | NetEvent::Timer(_) => {}
            }
        }
        self.now
    }

    fn check_pair(&self, from: PartyId, to: PartyId) -> Result<(), TransportError> {
        for p in [from, to] {
            if p == 0 || p > self.parties {
                return Err(TransportError::UnknownParty(p));
            }
        }
        if from == to {
            return Err(TransportError::SelfSend(from));
        }
        Ok(())
    }

    fn index(&self, from: PartyId, to: PartyId) -> usize {
        (from - 1) * self.parties + (to - 1)
    }

    fn schedule(&mut self, time: u64, event: Internal) {
        self.seq += 1;
        self.queue.push(Scheduled { time, seq: self.seq, event });
    }

    fn record(&mut self, kind: SimEventKind, subject: u64) {
        if let Some(log) = self.log.as_mut() {
            log.push(SimEvent { time: self.now, kind, subject });
        }
    }

    fn session_counter(&mut self, session: SessionId, party: PartyId) -> &mut TransportCounters {
        self.session_counters.entry((session, party)).or_default()
    }

    fn handle(&mut self, event: Internal) {
        match event {
            Internal::Flush { from, to } => {
                self.record(SimEventKind::Flush, (from * self.parties + to) as u64);
                let idx = self.index(from, to);
                self.links[idx].flush_pending = false;
                self.pump(from, to);
            }
            Internal::PacketArrival { unit, packet } => {
                self.record(SimEventKind::PacketArrival, unit);
                self.on_packet_arrival(unit, packet);
            }
            Internal::AckArrival { unit, packet } => {
                self.record(SimEventKind::AckArrival, unit);
                self.on_ack(unit, packet);
            }
            Internal::Retransmit { unit, packet, attempt } => {
                self.record(SimEventKind::RetransmitTimer, unit);
                self.transmit(unit, packet, attempt);
            }
            Internal::GiveUp { unit, reason } => {
                self.record(SimEventKind::Timeout, unit);
                if let Some(u) = self.units.remove(&unit) {
                    let messages: Vec<Message> = u.messages.into_iter().map(|p| p.message).collect();
                    let idx = self.index(u.from, u.to);
                    self.links[idx].in_flight -= 1;
                    self.ready.push_back(NetEvent::Failed { messages, reason });
                    self.pump(u.from, u.to);
                }
            }
            Internal::Timer(token) => {
                self.record(SimEventKind::Timer, token);
                self.ready.push_back(NetEvent::Timer(token));
            }
        }
    }

    /// Launches as many buffered wire units as the window allows.
    fn pump(&mut self, from: PartyId, to: PartyId) {
        let idx = self.index(from, to);
        let link = &mut self.links[idx];
        if link.buffer.is_empty() || link.in_flight >= self.window {
            return;
        }
        let params = link.params;
        let mut units = combine_pending(link.buffer.drain(..)).into_iter();
        let mut launch: Vec<WireUnit> = Vec::new();
        while link.in_flight < self.window {
            match units.next() {
                Some(u) => {
                    link.in_flight += 1;
                    launch.push(u);
                }
                None => break,
            }
        }
        // Units that did not fit stay queued and may still absorb later
        // messages of their session.
        for rest in units {
            link.buffer.extend(rest.messages);
        }
        for unit in launch {
            let combined = unit.messages.len() as u64 - 1;
            self.counters[from - 1].combined_messages += combined;
            self.session_counter(unit.session, from).combined_messages += combined;
            let id = self.next_unit;
            self.next_unit += 1;
            let size = unit.size();
            self.units.insert(
                id,
                Unit {
                    from,
                    to,
                    session: unit.session,
                    messages: unit.messages,
                    payloads: params.packet_payloads(size),
                    size,
                    deadline: None,
                },
            );
            self.transmit(id, 0, 1);
        }
    }

    fn transmit(&mut self, unit_id: u64, packet: usize, attempt: u32) {
        let Some(unit) = self.units.get_mut(&unit_id) else {
            return;
        };
        let (from, to, session) = (unit.from, unit.to, unit.session);
        let idx = (from - 1) * self.parties + (to - 1);
        let link = &mut self.links[idx];
        let params = link.params;
        let bytes = unit.payloads[packet] + params.header_overhead;
        let ser = params.serialization_ns(bytes);
        let start = self.now.max(link.tx_free_at);
        link.tx_free_at = start + ser;
        let deadline = *unit
            .deadline
            .get_or_insert(start + self.policy.barrier_timeout(&params, unit.size));

        let retx = u64::from(attempt > 1);
        for c in [&mut self.counters[from - 1], self.session_counters.entry((session, from)).or_default()] {
            c.packets_sent += 1;
            c.bytes_sent += bytes as u64;
            c.retransmissions += retx;
        }

        if !is_lost(&params, &mut self.rng) {
            let arrival = start + ser + params.one_way_latency_ns;
            self.schedule(arrival, Internal::PacketArrival { unit: unit_id, packet });
            return;
        }
        let retry_at = start + self.policy.rto(&params, attempt);
        if attempt >= self.policy.max_attempts {
            self.schedule(retry_at, Internal::GiveUp { unit: unit_id, reason: FailureReason::AttemptsExhausted });
        } else if retry_at + ser + params.one_way_latency_ns > deadline {
            self.schedule(deadline, Internal::GiveUp { unit: unit_id, reason: FailureReason::Timeout });
        } else {
            self.schedule(retry_at, Internal::Retransmit { unit: unit_id, packet, attempt: attempt + 1 });
        }
    }

    fn on_packet_arrival(&mut self, unit_id: u64, packet: usize) {
        let Some(unit) = self.units.get(&unit_id) else {
            return;
        };
        let (from, to, session) = (unit.from, unit.to, unit.session);
        let last = packet + 1 == unit.payloads.len();

        // Acknowledge on the reverse transmitter.
        let ridx = self.index(to, from);
        let reverse = &mut self.links[ridx];
        let params = reverse.params;
        let ack = params.ack_bytes();
        let ser = params.serialization_ns(ack);
        let start = self.now.max(reverse.tx_free_at);
        reverse.tx_free_at = start + ser;
        for c in [&mut self.counters[to - 1], self.session_counters.entry((session, to)).or_default()] {
            c.acks_sent += 1;
            c.bytes_sent += ack as u64;
        }
        self.schedule(start + ser + params.one_way_latency_ns, Internal::AckArrival { unit: unit_id, packet });

        if last {
            let messages: Vec<Pending> = self.units[&unit_id].messages.clone();
            for p in messages {
                self.record(SimEventKind::Delivery, p.id);
                self.counters[to - 1].messages_received += 1;
                self.session_counter(session, to).messages_received += 1;
                self.ready.push_back(NetEvent::Delivered(p.message));
            }
        }
    }

    fn on_ack(&mut self, unit_id: u64, packet: usize) {
        let Some(unit) = self.units.get(&unit_id) else {
            return;
        };
        if packet + 1 < unit.payloads.len() {
            self.transmit(unit_id, packet + 1, 1);
            return;
        }
        let unit = self.units.remove(&unit_id).expect("unit present");
        let idx = self.index(unit.from, unit.to);
        self.links[idx].in_flight -= 1;
        self.ready.push_back(NetEvent::Acknowledged(unit.messages.iter().map(|p| p.id).collect()));
        self.pump(unit.from, unit.to);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::link::{transfer_time, NANOS_PER_MS};

    fn msg(from: PartyId, to: PartyId, session: SessionId, len: usize) -> Message {
        Message { sender: from, receiver: to, session, round: 0, payload: vec![7; len] }
    }

    fn fast_link(latency_ms: u64) -> LinkParams {
        LinkParams { one_way_latency_ns: latency_ms * NANOS_PER_MS, rate_bps: u64::MAX, ..LinkParams::default() }
    }

    #[test]
    fn empty_network_ends_at_zero() {
        let mut net = SimulatedNetwork::new(NetworkConfig::new(3, LinkParams::default())).unwrap();
        assert_eq!(net.run_until_idle(), 0);
    }

    #[test]
    fn single_message_arrives_after_one_delay() {
        let mut net = SimulatedNetwork::new(NetworkConfig::new(2, fast_link(10))).unwrap();
        net.send(msg(1, 2, 0, 15)).unwrap();
        let mut times = vec![];
        while let Some((t, ev)) = net.next_event() {
            if let NetEvent::Delivered(m) = ev {
                assert_eq!(m.payload.len(), 15);
                times.push(t);
            }
        }
        assert_eq!(times, vec![10 * NANOS_PER_MS]);
        // the final event is the acknowledgement one delay later
        assert_eq!(net.now(), 20 * NANOS_PER_MS);
    }

    #[test]
    fn delivery_matches_transfer_time() {
        for (size, rate) in [(15usize, 1_000_000u64), (1500, 10_000_000), (4000, 1_000_000_000)] {
            let link = LinkParams { one_way_latency_ns: 3 * NANOS_PER_MS, rate_bps: rate, ..LinkParams::default() };
            let mut net = SimulatedNetwork::new(NetworkConfig::new(2, link)).unwrap();
            net.send(msg(1, 2, 0, size - 4)).unwrap();
            net.run_until_idle();
            let (t, _) = net.take_delivered()[0].clone();
            assert_eq!(t, transfer_time(size, &link), "size {size}");
        }
    }

    #[test]
    fn send_rejects_bad_endpoints() {
        let mut net = SimulatedNetwork::new(NetworkConfig::new(3, LinkParams::default())).unwrap();
        assert!(matches!(net.send(msg(1, 1, 0, 4)), Err(TransportError::SelfSend(1))));
        assert!(matches!(net.send(msg(1, 4, 0, 4)), Err(TransportError::UnknownParty(4))));
        assert!(matches!(net.send(msg(1, 2, 0, 0)), Err(TransportError::EmptyPayload)));
        net.send(msg(1, 2, 0, 4)).unwrap();
        net.send(msg(1, 3, 0, 4)).unwrap();
        assert_eq!(net.counters(1).messages_sent, 2);
    }

    #[test]
    fn back_to_back_sends_are_combined() {
        let mut net = SimulatedNetwork::new(NetworkConfig::new(2, fast_link(1))).unwrap();
        net.send(msg(1, 2, 5, 200)).unwrap();
        net.send(msg(1, 2, 5, 200)).unwrap();
        net.run_until_idle();
        let c = net.counters(1);
        assert_eq!((c.messages_sent, c.packets_sent, c.combined_messages), (2, 1, 1));
        assert_eq!(net.take_delivered().len(), 2);
        assert_eq!(net.counters(2).messages_received, 2);
    }

    #[test]
    fn different_sessions_use_separate_units() {
        let mut net = SimulatedNetwork::new(NetworkConfig::new(2, fast_link(1))).unwrap();
        net.send(msg(1, 2, 1, 200)).unwrap();
        net.send(msg(1, 2, 2, 200)).unwrap();
        net.run_until_idle();
        let c = net.counters(1);
        assert_eq!((c.packets_sent, c.combined_messages), (2, 0));
    }

    #[test]
    fn window_limits_units_in_flight() {
        let mut cfg = NetworkConfig::new(2, fast_link(10));
        cfg.window = 2;
        let mut net = SimulatedNetwork::new(cfg).unwrap();
        for s in 0..4 {
            net.send(msg(1, 2, s, 10)).unwrap();
        }
        net.run_until_idle();
        let times: Vec<u64> = net.take_delivered().iter().map(|(t, _)| *t / NANOS_PER_MS).collect();
        // two units per round trip of 20 ms
        assert_eq!(times, vec![10, 10, 30, 30]);
    }

    #[test]
    fn loss_inflates_packets_not_deliveries() {
        let mut cfg = NetworkConfig::new(3, LinkParams { loss_prob: 0.3, ..fast_link(1) });
        cfg.seed = 4;
        cfg.policy.barrier_factor = 1000;
        let mut net = SimulatedNetwork::new(cfg).unwrap();
        for s in 0..200 {
            for (a, b) in [(1, 2), (2, 3), (3, 1)] {
                net.send(msg(a, b, s, 15)).unwrap();
            }
        }
        net.run_until_idle();
        let sent: u64 = net.all_counters().iter().map(|c| c.messages_sent).sum();
        let received: u64 = net.all_counters().iter().map(|c| c.messages_received).sum();
        let packets: u64 = net.all_counters().iter().map(|c| c.packets_sent).sum();
        let retx: u64 = net.all_counters().iter().map(|c| c.retransmissions).sum();
        assert_eq!(sent, 600);
        assert_eq!(received, 600);
        assert_eq!(packets, 600 + retx);
        assert!(retx > 100);
        assert!(net.take_delivered().iter().all(|(_, m)| m.payload == vec![7; 15]));
    }

    #[test]
    fn single_loss_costs_one_timeout() {
        // find a seed whose first draw loses the packet and second delivers it
        let link = LinkParams { loss_prob: 0.5, ..fast_link(10) };
        let policy = RetransmitPolicy::default();
        let seed = (0..100)
            .find(|s| {
                let mut rng = SeededRng::seed_from_u64(*s);
                is_lost(&link, &mut rng) && !is_lost(&link, &mut rng)
            })
            .unwrap();
        let mut net = SimulatedNetwork::new(NetworkConfig::new(2, link).with_seed(seed)).unwrap();
        net.send(msg(1, 2, 0, 15)).unwrap();
        net.run_until_idle();
        let (t, _) = net.take_delivered()[0];
        assert_eq!(t, 10 * NANOS_PER_MS + policy.rto(&link, 1));
        assert_eq!(net.counters(1).retransmissions, 1);
    }

    #[test]
    fn stubborn_loss_times_out() {
        let link = LinkParams { loss_prob: 0.95, ..fast_link(10) };
        let mut net = SimulatedNetwork::new(NetworkConfig::new(2, link).with_seed(1)).unwrap();
        for s in 0..20 {
            net.send(msg(1, 2, s, 15)).unwrap();
        }
        net.run_until_idle();
        assert!(!net.failures().is_empty());
        assert!(net.failures().iter().all(|(_, _, r)| *r == FailureReason::Timeout));
    }

    #[test]
    fn identical_seeds_give_identical_logs() {
        let run = || {
            let mut cfg = NetworkConfig::new(3, LinkParams { loss_prob: 0.2, rate_bps: 1_000_000, ..fast_link(2) });
            cfg.record_log = true;
            cfg.seed = 99;
            let mut net = SimulatedNetwork::new(cfg).unwrap();
            for s in 0..30 {
                net.send(msg(1 + (s as usize % 3), 1 + ((s as usize + 1) % 3), s, 40)).unwrap();
            }
            net.run_until_idle();
            net.event_log().unwrap().to_vec()
        };
        let a = run();
        assert!(!a.is_empty());
        assert_eq!(a, run());
    }
}
