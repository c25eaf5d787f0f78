use std::collections::{BTreeMap, HashMap};
use std::net::{SocketAddr, TcpListener};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use super::party::{program_lambdas, PartySession};
use super::{EngineError, ProtocolProgram, SessionBatch, Workload};
use crate::field::{FieldElement, PrimeModulus};
use crate::sharing::Share;
use crate::transport::{PartyId, SessionId, SocketConfig, SocketEndpoint, TransportCounters, TransportError};

#[derive(Debug, Clone, Copy)]
pub struct SocketRunOptions {
    pub seed: u64,
    pub modulus: PrimeModulus,
    /// Longest silence tolerated while a session waits for a round.
    pub round_timeout: Duration,
    pub socket: SocketConfig,
}

impl Default for SocketRunOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            modulus: PrimeModulus::default(),
            round_timeout: Duration::from_secs(30),
            socket: SocketConfig::default(),
        }
    }
}

/// What one party saw of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PartyOutcome {
    pub party: PartyId,
    /// Result per session id.
    pub results: BTreeMap<SessionId, FieldElement>,
    /// Messages this party sent per session.
    pub session_messages: BTreeMap<SessionId, u64>,
    pub counters: TransportCounters,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterOutcome {
    /// Indexed by party - 1.
    pub parties: Vec<PartyOutcome>,
    pub elapsed: Duration,
}

impl ClusterOutcome {
    /// Results agreed on by every party, or an error naming the first session
    /// on which they differ.
    pub fn results(&self) -> Result<BTreeMap<SessionId, FieldElement>, EngineError> {
        let first = &self.parties[0].results;
        for p in &self.parties[1..] {
            if let Some((s, _)) = first.iter().find(|(s, v)| p.results.get(s) != Some(v)) {
                return Err(EngineError::Inconsistent(*s));
            }
        }
        Ok(first.clone())
    }

    pub fn messages_sent(&self) -> u64 {
        self.parties.iter().map(|p| p.counters.messages_sent).sum()
    }
}

/// Drives this party's side of every session in `batch` over a connected
/// endpoint, `batch.pf` sessions at a time.
pub fn run_party(
    endpoint: &SocketEndpoint,
    program: &ProtocolProgram,
    batch: &SessionBatch,
    workload: &mut dyn Workload,
    options: &SocketRunOptions,
) -> Result<PartyOutcome, EngineError> {
    let party = endpoint.party();
    if endpoint.parties() != program.parties() {
        return Err(EngineError::InvalidBatch(format!(
            "mesh has {} parties, program needs {}",
            endpoint.parties(),
            program.parties()
        )));
    }
    let started = Instant::now();
    let program = Arc::new(program.clone());
    let lambdas = program_lambdas(&program, options.modulus.zero())?;
    let mut active: HashMap<SessionId, (usize, PartySession)> = HashMap::new();
    let mut early: HashMap<SessionId, Vec<(PartyId, Vec<u8>)>> = HashMap::new();
    let mut previous: Vec<Option<FieldElement>> = vec![None; batch.pf];
    let mut results = BTreeMap::new();
    let mut session_messages = BTreeMap::new();

    let mut start = |session: SessionId,
                     lane: usize,
                     previous: Option<FieldElement>,
                     active: &mut HashMap<SessionId, (usize, PartySession)>,
                     early: &mut HashMap<SessionId, Vec<(PartyId, Vec<u8>)>>|
     -> Result<u64, EngineError> {
        let inputs = workload.inputs(session, lane, previous);
        if inputs.len() != program.parties() {
            return Err(EngineError::InputCount { expected: program.parties(), got: inputs.len() });
        }
        let mut ps = PartySession::new(session, party, Arc::clone(&program), Arc::clone(&lambdas), inputs[party - 1], options.seed);
        let outgoing = ps.start().outgoing;
        for m in &outgoing {
            endpoint.send(m.receiver, &m.payload)?;
        }
        for (from, payload) in early.remove(&session).unwrap_or_default() {
            ps.receive(from, &payload)?;
        }
        active.insert(session, (lane, ps));
        Ok(outgoing.len() as u64)
    };

    for lane in 0..batch.pf {
        if let Some(s) = batch.first_of_lane(lane) {
            let sent = start(s, lane, None, &mut active, &mut early)?;
            session_messages.insert(s, sent);
        }
    }
    let mut pending: Vec<SessionId> = active.keys().copied().collect();
    loop {
        // Advance every session that has a complete round.
        while let Some(session) = pending.pop() {
            let Some((lane, ps)) = active.get_mut(&session) else { continue };
            let lane = *lane;
            let mut finished = None;
            while ps.ready() {
                let progress = ps.advance()?;
                *session_messages.entry(session).or_insert(0) += progress.outgoing.len() as u64;
                for m in &progress.outgoing {
                    endpoint.send(m.receiver, &m.payload)?;
                }
                finished = progress.result;
            }
            if let Some(value) = finished {
                active.remove(&session);
                results.insert(session, value);
                previous[lane] = Some(value);
                if let Some(next) = batch.next_in_lane(session) {
                    let sent = start(next, lane, previous[lane], &mut active, &mut early)?;
                    session_messages.insert(next, sent);
                    pending.push(next);
                }
            }
        }
        if active.is_empty() {
            break;
        }
        let (from, payload) = match endpoint.recv_timeout(options.round_timeout) {
            Ok(frame) => frame,
            // A peer that finished its last session closes its links; any
            // frames it sent earlier have already been read.
            Err(TransportError::Closed(peer)) if peer != party => continue,
            Err(TransportError::Timeout) => {
                let session = *active.keys().min().expect("active session");
                return Err(EngineError::Transport(TransportError::Protocol {
                    peer: party,
                    reason: format!("session {session} timed out waiting for a round"),
                }));
            }
            Err(e) => return Err(e.into()),
        };
        let (share, _, _) = Share::decode(&payload, &options.modulus)?;
        let session = share.session_tag;
        if let Some((_, ps)) = active.get_mut(&session) {
            ps.receive(from, &payload)?;
            pending.push(session);
        } else if session < batch.sessions && !results.contains_key(&session) {
            early.entry(session).or_default().push((from, payload));
        } else {
            return Err(EngineError::UnexpectedMessage { from, reason: format!("message for unknown session {session}") });
        }
    }
    Ok(PartyOutcome { party, results, session_messages, counters: endpoint.counters(), elapsed: started.elapsed() })
}

/// Runs all `n` parties as threads connected over loopback TCP.
pub fn run_local_cluster<W, F>(
    program: &ProtocolProgram,
    batch: &SessionBatch,
    make_workload: F,
    options: &SocketRunOptions,
) -> Result<ClusterOutcome, EngineError>
where
    W: Workload,
    F: Fn(PartyId) -> W + Sync,
{
    let n = program.parties();
    let listeners = (0..n)
        .map(|_| TcpListener::bind("127.0.0.1:0"))
        .collect::<Result<Vec<_>, _>>()
        .map_err(TransportError::from)?;
    let addrs: Vec<SocketAddr> =
        listeners.iter().map(TcpListener::local_addr).collect::<Result<_, _>>().map_err(TransportError::from)?;
    let started = Instant::now();
    let outcomes: Vec<Result<(PartyOutcome, SocketEndpoint), EngineError>> = thread::scope(|scope| {
        let handles: Vec<_> = listeners
            .into_iter()
            .enumerate()
            .map(|(i, listener)| {
                let (addrs, make_workload) = (&addrs, &make_workload);
                scope.spawn(move || {
                    let endpoint = SocketEndpoint::with_listener(i + 1, listener, addrs, options.socket)?;
                    let mut workload = make_workload(i + 1);
                    let outcome = run_party(&endpoint, program, batch, &mut workload, options)?;
                    Ok((outcome, endpoint))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or(Err(EngineError::PartyPanicked))).collect()
    });
    let elapsed = started.elapsed();
    let mut parties = Vec::with_capacity(n);
    let mut endpoints = Vec::with_capacity(n);
    for o in outcomes {
        let (outcome, endpoint) = o?;
        parties.push(outcome);
        endpoints.push(endpoint);
    }
    drop(endpoints);
    Ok(ClusterOutcome { parties, elapsed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{build_product_program, build_sum_program};
    use crate::sharing::ThresholdConfig;

    #[test]
    fn loopback_sum_sessions() {
        let cfg = ThresholdConfig::with_default_threshold(3).unwrap();
        let program = build_sum_program(&cfg);
        let f = PrimeModulus::default();
        let batch = SessionBatch::new(20, 4).unwrap();
        let out = run_local_cluster(
            &program,
            &batch,
            |_| move |s: SessionId, _: usize, _: Option<FieldElement>| vec![f.element(1), f.element(2), f.element(u128::from(s))],
            &SocketRunOptions::default(),
        )
        .unwrap();
        let results = out.results().unwrap();
        assert_eq!(results.len(), 20);
        for (s, v) in results {
            assert_eq!(v.value(), 3 + u128::from(s));
        }
        assert_eq!(out.messages_sent(), 20 * 12);
        for p in &out.parties {
            assert!(p.session_messages.values().all(|&m| m == 4));
        }
    }

    #[test]
    fn loopback_product_chain() {
        let cfg = ThresholdConfig::with_default_threshold(4).unwrap();
        let program = build_product_program(&cfg);
        let f = PrimeModulus::default();
        let batch = SessionBatch::new(6, 2).unwrap();
        let out = run_local_cluster(
            &program,
            &batch,
            |_| move |_: SessionId, _: usize, prev: Option<FieldElement>| {
                vec![prev.unwrap_or(f.one()), f.element(2), f.one(), f.one()]
            },
            &SocketRunOptions::default(),
        )
        .unwrap();
        let results = out.results().unwrap();
        // Each lane doubles its running product three times.
        assert_eq!(results[&4].value(), 8);
        assert_eq!(results[&5].value(), 8);
        assert_eq!(out.messages_sent() as usize, 6 * program.total_messages());
    }
}
