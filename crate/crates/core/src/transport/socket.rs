//! TCP full mesh with length-prefixed frames.
//!
//! Every party listens on its own address and dials every party with a higher
//! id, so each pair ends up with exactly one connection opened by the lower id.
//! The first frame on a connection is the handshake `[0x01, dialer id]`; after
//! that each frame is a 4-byte big-endian length followed by the payload.

use std::collections::{HashMap, HashSet};
use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::link::{DEFAULT_HEADER_OVERHEAD, DEFAULT_MTU_PAYLOAD};
use super::message::{TransportCounters, FRAME_HEADER_LEN};
use super::{PartyId, TransportError};

pub const PROTOCOL_VERSION: u8 = 0x01;
/// Frames above this size are treated as corruption.
pub const MAX_FRAME_LEN: u32 = 16 << 20;

#[derive(Debug, Clone, Copy)]
pub struct SocketConfig {
    pub connect_timeout: Duration,
    /// Used only to estimate header bytes in the counters.
    pub mtu_payload: usize,
    pub header_overhead: usize,
}

impl Default for SocketConfig {
    fn default() -> Self {
        Self {
            connect_timeout: Duration::from_secs(30),
            mtu_payload: DEFAULT_MTU_PAYLOAD,
            header_overhead: DEFAULT_HEADER_OVERHEAD,
        }
    }
}

#[derive(Default)]
struct AtomicCounters {
    bytes_sent: AtomicU64,
    messages_sent: AtomicU64,
    packets_sent: AtomicU64,
    messages_received: AtomicU64,
}

enum Incoming {
    Frame(PartyId, Vec<u8>),
    Closed(PartyId, Option<String>),
}

/// One party's end of the mesh. `send` may be called from several threads.
pub struct SocketEndpoint {
    party: PartyId,
    parties: usize,
    config: SocketConfig,
    writers: HashMap<PartyId, Mutex<TcpStream>>,
    inbox: Mutex<Receiver<Incoming>>,
    counters: Arc<AtomicCounters>,
}

impl SocketEndpoint {
    /// Binds `peers[party - 1]` and connects to everyone else.
    pub fn connect(party: PartyId, peers: &[SocketAddr], config: SocketConfig) -> Result<Self, TransportError> {
        validate_table(party, peers)?;
        let listener = TcpListener::bind(peers[party - 1])?;
        Self::with_listener(party, listener, peers, config)
    }

    /// Like [`Self::connect`] with an already bound listener (useful with
    /// port 0 on loopback).
    pub fn with_listener(
        party: PartyId,
        listener: TcpListener,
        peers: &[SocketAddr],
        config: SocketConfig,
    ) -> Result<Self, TransportError> {
        validate_table(party, peers)?;
        let deadline = Instant::now() + config.connect_timeout;
        let n = peers.len();

        let accept = {
            let listener = listener.try_clone()?;
            thread::spawn(move || accept_lower(party, listener, deadline))
        };
        let mut streams = dial_higher(party, peers, deadline)?;
        let accepted = accept
            .join()
            .map_err(|_| TransportError::Startup("accept thread panicked".into()))??;
        streams.extend(accepted);

        let (tx, rx) = mpsc::channel();
        let counters = Arc::new(AtomicCounters::default());
        let mut writers = HashMap::new();
        for (peer, stream) in streams {
            stream.set_nodelay(true)?;
            let reader = stream.try_clone()?;
            let tx = tx.clone();
            let counters = Arc::clone(&counters);
            thread::spawn(move || read_frames(peer, reader, tx, counters));
            writers.insert(peer, Mutex::new(stream));
        }
        if writers.len() != n - 1 {
            return Err(TransportError::Startup(format!(
                "party {party} has {} of {} links",
                writers.len(),
                n - 1
            )));
        }
        Ok(Self { party, parties: n, config, writers, inbox: Mutex::new(rx), counters })
    }

    pub fn party(&self) -> PartyId {
        self.party
    }

    pub fn parties(&self) -> usize {
        self.parties
    }

    pub fn links(&self) -> usize {
        self.writers.len()
    }

    /// Writes one frame to `receiver`.
    pub fn send(&self, receiver: PartyId, payload: &[u8]) -> Result<(), TransportError> {
        if receiver == self.party {
            return Err(TransportError::SelfSend(receiver));
        }
        if payload.is_empty() {
            return Err(TransportError::EmptyPayload);
        }
        let writer = self.writers.get(&receiver).ok_or(TransportError::UnknownParty(receiver))?;
        let mut frame = Vec::with_capacity(FRAME_HEADER_LEN + payload.len());
        frame.extend_from_slice(&(payload.len() as u32).to_be_bytes());
        frame.extend_from_slice(payload);
        writer
            .lock()
            .expect("writer lock poisoned")
            .write_all(&frame)
            .map_err(|_| TransportError::Closed(receiver))?;

        let packets = frame.len().div_ceil(self.config.mtu_payload) as u64;
        let c = &self.counters;
        c.messages_sent.fetch_add(1, Ordering::Relaxed);
        c.packets_sent.fetch_add(packets, Ordering::Relaxed);
        c.bytes_sent
            .fetch_add(frame.len() as u64 + packets * self.config.header_overhead as u64, Ordering::Relaxed);
        Ok(())
    }

    /// Next frame from any peer. A zero-length frame or a closed link
    /// surfaces as an error.
    pub fn recv_timeout(&self, timeout: Duration) -> Result<(PartyId, Vec<u8>), TransportError> {
        let inbox = self.inbox.lock().expect("inbox lock poisoned");
        match inbox.recv_timeout(timeout) {
            Ok(Incoming::Frame(from, payload)) => Ok((from, payload)),
            Ok(Incoming::Closed(peer, Some(reason))) => Err(TransportError::Protocol { peer, reason }),
            Ok(Incoming::Closed(peer, None)) => Err(TransportError::Closed(peer)),
            Err(RecvTimeoutError::Timeout) => Err(TransportError::Timeout),
            Err(RecvTimeoutError::Disconnected) => Err(TransportError::Closed(self.party)),
        }
    }

    pub fn counters(&self) -> TransportCounters {
        let c = &self.counters;
        TransportCounters {
            bytes_sent: c.bytes_sent.load(Ordering::Relaxed),
            messages_sent: c.messages_sent.load(Ordering::Relaxed),
            packets_sent: c.packets_sent.load(Ordering::Relaxed),
            messages_received: c.messages_received.load(Ordering::Relaxed),
            ..TransportCounters::default()
        }
    }
}

impl Drop for SocketEndpoint {
    fn drop(&mut self) {
        for w in self.writers.values() {
            if let Ok(s) = w.lock() {
                let _ = s.shutdown(std::net::Shutdown::Both);
            }
        }
    }
}

fn validate_table(party: PartyId, peers: &[SocketAddr]) -> Result<(), TransportError> {
    if peers.len() < 2 || peers.len() > 255 {
        return Err(TransportError::Startup(format!("{} parties in table", peers.len())));
    }
    if party == 0 || party > peers.len() {
        return Err(TransportError::UnknownParty(party));
    }
    let mut seen = HashSet::new();
    for addr in peers {
        if !seen.insert(addr) {
            return Err(TransportError::Startup(format!("duplicate address {addr} in party table")));
        }
    }
    Ok(())
}

fn dial_higher(
    party: PartyId,
    peers: &[SocketAddr],
    deadline: Instant,
) -> Result<Vec<(PartyId, TcpStream)>, TransportError> {
    let mut out = Vec::new();
    for peer in party + 1..=peers.len() {
        let addr = peers[peer - 1];
        let mut stream = loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(TransportError::Startup(format!("connect to party {peer} at {addr} timed out")));
            }
            match TcpStream::connect_timeout(&addr, left.min(Duration::from_secs(1))) {
                Ok(s) => break s,
                Err(_) => thread::sleep(Duration::from_millis(20)),
            }
        };
        write_frame(&mut stream, &[PROTOCOL_VERSION, party as u8])?;
        out.push((peer, stream));
    }
    Ok(out)
}

fn accept_lower(
    party: PartyId,
    listener: TcpListener,
    deadline: Instant,
) -> Result<Vec<(PartyId, TcpStream)>, TransportError> {
    listener.set_nonblocking(true)?;
    let mut out: Vec<(PartyId, TcpStream)> = Vec::new();
    while out.len() < party - 1 {
        if Instant::now() >= deadline {
            return Err(TransportError::Startup(format!(
                "party {party} accepted {} of {} connections",
                out.len(),
                party - 1
            )));
        }
        match listener.accept() {
            Ok((mut stream, _)) => {
                stream.set_nonblocking(false)?;
                stream.set_read_timeout(Some(Duration::from_secs(5)))?;
                let hello = match read_frame(&mut stream) {
                    Ok(Some(h)) => h,
                    _ => continue,
                };
                stream.set_read_timeout(None)?;
                if hello.len() != 2 || hello[0] != PROTOCOL_VERSION {
                    continue;
                }
                let peer = PartyId::from(hello[1]);
                // Only lower ids dial; anything else is a duplicate or stray.
                if peer == 0 || peer >= party || out.iter().any(|(p, _)| *p == peer) {
                    continue;
                }
                out.push((peer, stream));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

fn write_frame(stream: &mut TcpStream, payload: &[u8]) -> std::io::Result<()> {
    let mut frame = (payload.len() as u32).to_be_bytes().to_vec();
    frame.extend_from_slice(payload);
    stream.write_all(&frame)
}

/// `Ok(None)` on clean EOF.
fn read_frame(stream: &mut TcpStream) -> std::io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; FRAME_HEADER_LEN];
    match stream.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len);
    if len == 0 || len > MAX_FRAME_LEN {
        return Err(std::io::Error::new(ErrorKind::InvalidData, format!("frame length {len}")));
    }
    let mut payload = vec![0u8; len as usize];
    stream.read_exact(&mut payload)?;
    Ok(Some(payload))
}

fn read_frames(peer: PartyId, mut stream: TcpStream, tx: Sender<Incoming>, counters: Arc<AtomicCounters>) {
    loop {
        match read_frame(&mut stream) {
            Ok(Some(payload)) => {
                counters.messages_received.fetch_add(1, Ordering::Relaxed);
                if tx.send(Incoming::Frame(peer, payload)).is_err() {
                    return;
                }
            }
            Ok(None) => {
                let _ = tx.send(Incoming::Closed(peer, None));
                return;
            }
            Err(e) => {
                let _ = stream.shutdown(std::net::Shutdown::Both);
                let reason = if e.kind() == ErrorKind::InvalidData { Some(e.to_string()) } else { None };
                let _ = tx.send(Incoming::Closed(peer, reason));
                return;
            }
        }
    }
}
