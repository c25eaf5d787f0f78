use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;

use super::compute::ComputeProfile;
use super::party::{program_lambdas, PartySession, Progress};
use super::{EngineError, FixedInputs, SessionBatch, Workload};
use crate::field::{FieldElement, PrimeModulus};
use crate::transport::{
    FailureReason, Message, MessageId, NetEvent, PartyId, SessionId, SimulatedNetwork, TransportCounters,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    pub profile: ComputeProfile,
    /// Seed of the share randomness (the network has its own seed).
    pub seed: u64,
    /// Hosts hand out their input shares one after another: party `k + 1`
    /// starts sending once every input message of party `k` is acknowledged.
    pub sequential_input: bool,
    pub modulus: PrimeModulus,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self { profile: ComputeProfile::default(), seed: 0, sequential_input: true, modulus: PrimeModulus::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutcome {
    pub session: SessionId,
    pub lane: usize,
    pub inputs: Vec<FieldElement>,
    pub result: Result<FieldElement, (u16, FailureReason)>,
    pub started_ns: u64,
    pub finished_ns: u64,
    /// Traffic of this session, indexed by party - 1.
    pub counters: Vec<TransportCounters>,
}

impl SessionOutcome {
    pub fn duration_ns(&self) -> u64 {
        self.finished_ns - self.started_ns
    }

    pub fn messages(&self) -> u64 {
        self.counters.iter().map(|c| c.messages_sent).sum()
    }

    pub fn is_success(&self) -> bool {
        self.result.is_ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    /// Ordered by session id.
    pub sessions: Vec<SessionOutcome>,
    pub started_ns: u64,
    pub finished_ns: u64,
    /// Whole-batch traffic per party.
    pub counters: Vec<TransportCounters>,
    /// Largest gap in completed rounds between two parties of one session.
    pub max_round_lead: usize,
}

impl BatchOutcome {
    pub fn duration_ns(&self) -> u64 {
        self.finished_ns - self.started_ns
    }

    pub fn amortized_ns(&self) -> f64 {
        self.duration_ns() as f64 / self.sessions.len() as f64
    }

    pub fn failures(&self) -> usize {
        self.sessions.iter().filter(|s| !s.is_success()).count()
    }

    /// Result of the last successful session of every lane.
    pub fn lane_results(&self) -> BTreeMap<usize, FieldElement> {
        let mut out = BTreeMap::new();
        for s in &self.sessions {
            if let Ok(v) = s.result {
                out.insert(s.lane, v);
            }
        }
        out
    }
}

/// Runs one session alone on `net`.
pub fn run_session(
    program: &super::ProtocolProgram,
    inputs: &[FieldElement],
    net: &mut SimulatedNetwork,
    options: &SimulationOptions,
) -> Result<SessionOutcome, EngineError> {
    let batch = SessionBatch::new(1, 1)?;
    let mut outcome = run_batch(program, &batch, &mut FixedInputs(vec![inputs.to_vec()]), net, options)?;
    let session = outcome.sessions.remove(0);
    match session.result {
        Ok(_) => Ok(session),
        Err((round, reason)) => Err(EngineError::SessionFailed { session: session.session, round, reason }),
    }
}

/// Runs a batch to completion. Failed sessions are reported in their outcome
/// and do not stop the rest of the batch.
pub fn run_batch(
    program: &super::ProtocolProgram,
    batch: &SessionBatch,
    workload: &mut dyn Workload,
    net: &mut SimulatedNetwork,
    options: &SimulationOptions,
) -> Result<BatchOutcome, EngineError> {
    if net.parties() != program.parties() {
        return Err(EngineError::InvalidBatch(format!(
            "network has {} parties, program needs {}",
            net.parties(),
            program.parties()
        )));
    }
    let mut driver = Driver {
        program: Arc::new(program.clone()),
        lambdas: program_lambdas(program, options.modulus.zero())?,
        options: *options,
        batch: *batch,
        workload,
        net,
        hosts: (0..program.parties()).map(|_| Host::default()).collect(),
        tasks: HashMap::new(),
        next_token: 0,
        active: HashMap::new(),
        input_acks: HashMap::new(),
        done: BTreeMap::new(),
        previous: vec![None; batch.pf],
        max_round_lead: 0,
    };
    driver.run()
}

#[derive(Debug)]
enum Effect {
    Inputs(Vec<Message>),
    Send(Vec<Message>),
    Finish(FieldElement),
}

#[derive(Debug)]
struct Task {
    session: SessionId,
    party: PartyId,
    cost: u64,
    effect: Effect,
}

#[derive(Debug, Default)]
struct Host {
    busy: usize,
    queue: VecDeque<Task>,
}

struct Active {
    lane: usize,
    started: u64,
    inputs: Vec<FieldElement>,
    parties: Vec<PartySession>,
    busy: Vec<bool>,
    results: Vec<Option<FieldElement>>,
    staged: Vec<Option<Vec<Message>>>,
    inputs_sent: Vec<bool>,
    input_turn: usize,
    unacked: usize,
}

struct Driver<'a> {
    program: Arc<super::ProtocolProgram>,
    lambdas: Arc<[FieldElement]>,
    options: SimulationOptions,
    batch: SessionBatch,
    workload: &'a mut dyn Workload,
    net: &'a mut SimulatedNetwork,
    hosts: Vec<Host>,
    tasks: HashMap<u64, Task>,
    next_token: u64,
    active: HashMap<SessionId, Active>,
    input_acks: HashMap<MessageId, SessionId>,
    done: BTreeMap<SessionId, SessionOutcome>,
    previous: Vec<Option<FieldElement>>,
    max_round_lead: usize,
}

impl Driver<'_> {
    fn run(&mut self) -> Result<BatchOutcome, EngineError> {
        let started_ns = self.net.now();
        for lane in 0..self.batch.pf {
            if let Some(s) = self.batch.first_of_lane(lane) {
                self.start_session(s, lane)?;
            }
        }
        while !self.active.is_empty() {
            let Some((_, event)) = self.net.next_event() else {
                return Err(EngineError::Stalled(self.active.len()));
            };
            match event {
                NetEvent::Delivered(msg) => {
                    let (session, receiver) = (msg.session, msg.receiver);
                    if let Some(a) = self.active.get_mut(&session) {
                        a.parties[receiver - 1].receive(msg.sender, &msg.payload)?;
                        self.try_advance(session, receiver)?;
                    }
                }
                NetEvent::Acknowledged(ids) => {
                    for id in ids {
                        if let Some(session) = self.input_acks.remove(&id) {
                            if let Some(a) = self.active.get_mut(&session) {
                                a.unacked -= 1;
                                if a.unacked == 0 {
                                    a.input_turn += 1;
                                    self.hand_off(session)?;
                                }
                            }
                        }
                    }
                }
                NetEvent::Failed { messages, reason } => {
                    let first = &messages[0];
                    if self.active.contains_key(&first.session) {
                        self.finish(first.session, Err((first.round, reason)))?;
                    }
                }
                NetEvent::Timer(token) => self.complete_task(token)?,
            }
        }
        let finished_ns = self.done.values().map(|s| s.finished_ns).max().unwrap_or(started_ns);
        // Drain trailing acknowledgements so the counters are complete.
        self.net.run_until_idle();
        let mut sessions: Vec<SessionOutcome> = std::mem::take(&mut self.done).into_values().collect();
        for s in &mut sessions {
            s.counters = self.net.session_counters(s.session);
        }
        Ok(BatchOutcome {
            sessions,
            started_ns,
            finished_ns,
            counters: self.net.all_counters().to_vec(),
            max_round_lead: self.max_round_lead,
        })
    }

    fn start_session(&mut self, session: SessionId, lane: usize) -> Result<(), EngineError> {
        let n = self.program.parties();
        let inputs = self.workload.inputs(session, lane, self.previous[lane]);
        if inputs.len() != n {
            return Err(EngineError::InputCount { expected: n, got: inputs.len() });
        }
        let mut parties: Vec<PartySession> = inputs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                PartySession::new(session, i + 1, Arc::clone(&self.program), Arc::clone(&self.lambdas), *x, self.options.seed)
            })
            .collect();
        let progress: Vec<Progress> = parties.iter_mut().map(PartySession::start).collect();
        self.active.insert(
            session,
            Active {
                lane,
                started: self.net.now(),
                inputs,
                parties,
                busy: vec![true; n],
                results: vec![None; n],
                staged: vec![None; n],
                inputs_sent: vec![false; n],
                input_turn: 0,
                unacked: 0,
            },
        );
        for (i, p) in progress.into_iter().enumerate() {
            let cost = self.options.profile.cost(p.work);
            self.submit(Task { session, party: i + 1, cost, effect: Effect::Inputs(p.outgoing) });
        }
        Ok(())
    }

    fn submit(&mut self, task: Task) {
        let host = &mut self.hosts[task.party - 1];
        if host.busy < self.options.profile.lanes.max(1) {
            host.busy += 1;
            self.schedule(task);
        } else {
            host.queue.push_back(task);
        }
    }

    fn schedule(&mut self, task: Task) {
        let token = self.next_token;
        self.next_token += 1;
        self.net.schedule_timer(self.net.now() + task.cost, token);
        self.tasks.insert(token, task);
    }

    fn complete_task(&mut self, token: u64) -> Result<(), EngineError> {
        let task = self.tasks.remove(&token).expect("timer for a scheduled task");
        let host = &mut self.hosts[task.party - 1];
        host.busy -= 1;
        if let Some(next) = host.queue.pop_front() {
            host.busy += 1;
            self.schedule(next);
        }
        let Task { session, party, effect, .. } = task;
        let Some(a) = self.active.get_mut(&session) else {
            return Ok(());
        };
        a.busy[party - 1] = false;
        match effect {
            Effect::Inputs(messages) => {
                if self.options.sequential_input {
                    a.staged[party - 1] = Some(messages);
                    self.hand_off(session)?;
                } else {
                    a.inputs_sent[party - 1] = true;
                    self.send_all(messages)?;
                }
            }
            Effect::Send(messages) => self.send_all(messages)?,
            Effect::Finish(value) => {
                a.results[party - 1] = Some(value);
                if a.results.iter().all(Option::is_some) {
                    if a.results.iter().any(|r| *r != Some(value)) {
                        return Err(EngineError::Inconsistent(session));
                    }
                    return self.finish(session, Ok(value));
                }
            }
        }
        self.try_advance(session, party)
    }

    /// Sends the staged input shares of whichever host holds the turn.
    fn hand_off(&mut self, session: SessionId) -> Result<(), EngineError> {
        let Some(a) = self.active.get_mut(&session) else {
            return Ok(());
        };
        if a.unacked > 0 || a.input_turn >= a.staged.len() {
            return Ok(());
        }
        let party = a.input_turn + 1;
        let Some(messages) = a.staged[party - 1].take() else {
            return Ok(());
        };
        a.unacked = messages.len();
        a.inputs_sent[party - 1] = true;
        for m in messages {
            let id = self.net.send(m)?;
            self.input_acks.insert(id, session);
        }
        self.try_advance(session, party)
    }

    fn send_all(&mut self, messages: Vec<Message>) -> Result<(), EngineError> {
        for m in messages {
            self.net.send(m)?;
        }
        Ok(())
    }

    fn try_advance(&mut self, session: SessionId, party: PartyId) -> Result<(), EngineError> {
        let Some(a) = self.active.get_mut(&session) else {
            return Ok(());
        };
        let idx = party - 1;
        // A host finishes handing out its own input before going further.
        if a.busy[idx] || !a.inputs_sent[idx] || !a.parties[idx].ready() {
            return Ok(());
        }
        let progress = a.parties[idx].advance()?;
        a.busy[idx] = true;
        let rounds = a.parties.iter().map(PartySession::rounds_completed);
        let lead = rounds.clone().max().unwrap_or(0) - rounds.min().unwrap_or(0);
        self.max_round_lead = self.max_round_lead.max(lead);
        let cost = self.options.profile.cost(progress.work);
        let effect = match progress.result {
            Some(v) => Effect::Finish(v),
            None => Effect::Send(progress.outgoing),
        };
        self.submit(Task { session, party, cost, effect });
        Ok(())
    }

    fn finish(&mut self, session: SessionId, result: Result<FieldElement, (u16, FailureReason)>) -> Result<(), EngineError> {
        let a = self.active.remove(&session).expect("finishing an active session");
        if let Ok(v) = result {
            self.previous[a.lane] = Some(v);
        }
        self.done.insert(
            session,
            SessionOutcome {
                session,
                lane: a.lane,
                inputs: a.inputs,
                result,
                started_ns: a.started,
                finished_ns: self.net.now(),
                counters: Vec::new(),
            },
        );
        match self.batch.next_in_lane(session) {
            Some(next) => self.start_session(next, a.lane),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{build_product_program, build_sum_program, ProtocolProgram};
    use crate::sharing::ThresholdConfig;
    use crate::transport::{LinkParams, NetworkConfig, NANOS_PER_MS};

    fn cfg(n: usize) -> ThresholdConfig {
        ThresholdConfig::with_default_threshold(n).unwrap()
    }

    fn network(n: usize, link: LinkParams, seed: u64) -> SimulatedNetwork {
        SimulatedNetwork::new(NetworkConfig::new(n, link).with_seed(seed)).unwrap()
    }

    fn elements(values: &[u128]) -> Vec<FieldElement> {
        let f = PrimeModulus::default();
        values.iter().map(|v| f.element(*v)).collect()
    }

    fn free() -> SimulationOptions {
        SimulationOptions { profile: ComputeProfile::free(), ..SimulationOptions::default() }
    }

    #[test]
    fn sum_session_over_the_network() {
        let mut net = network(3, LinkParams::default(), 1);
        let out = run_session(&build_sum_program(&cfg(3)), &elements(&[3, 4, 5]), &mut net, &SimulationOptions::default()).unwrap();
        assert_eq!(out.result.unwrap().value(), 12);
        assert_eq!(out.messages(), 12);
        assert!(out.counters.iter().all(|c| c.messages_sent == 4));
    }

    #[test]
    fn zero_inputs() {
        let mut net = network(3, LinkParams::default(), 1);
        let sum = run_session(&build_sum_program(&cfg(3)), &elements(&[0, 0, 0]), &mut net, &free()).unwrap();
        assert!(sum.result.unwrap().is_zero());
        let mut net = network(4, LinkParams::default(), 1);
        let product = run_session(&build_product_program(&cfg(4)), &elements(&[5, 0, 6, 7]), &mut net, &free()).unwrap();
        assert!(product.result.unwrap().is_zero());
        assert_eq!(product.messages(), 60);
    }

    #[test]
    fn sequential_input_sum_timing() {
        // One-way 8 ms, no compute: n - 1 input hand-offs of one round trip
        // each, the last host's shares, then the open round.
        let link = LinkParams { one_way_latency_ns: 8 * NANOS_PER_MS, rate_bps: u64::MAX, ..LinkParams::default() };
        for n in [3, 5, 9] {
            let mut net = network(n, link, 0);
            let inputs = elements(&vec![1; n]);
            let out = run_session(&build_sum_program(&cfg(n)), &inputs, &mut net, &free()).unwrap();
            assert_eq!(out.duration_ns(), 2 * n as u64 * 8 * NANOS_PER_MS, "n={n}");
        }
    }

    #[test]
    fn parallel_input_sum_timing() {
        let link = LinkParams { one_way_latency_ns: 8 * NANOS_PER_MS, rate_bps: u64::MAX, ..LinkParams::default() };
        let mut net = network(5, link, 0);
        let options = SimulationOptions { sequential_input: false, ..free() };
        let out = run_session(&build_sum_program(&cfg(5)), &elements(&[1; 5]), &mut net, &options).unwrap();
        assert_eq!(out.duration_ns(), 16 * NANOS_PER_MS);
    }

    #[test]
    fn rounds_stay_synchronized() {
        let link = LinkParams::from_configured(16.0, 10.0, 0.02).unwrap();
        let mut net = network(5, link, 3);
        let program = build_product_program(&cfg(5));
        let mut workload = |s: SessionId, _: usize, _: Option<FieldElement>| elements(&[1, 2, 3, 4, u128::from(s)]);
        let out = run_batch(&program, &SessionBatch::new(20, 4).unwrap(), &mut workload, &mut net, &SimulationOptions::default())
            .unwrap();
        assert!(out.max_round_lead <= 1);
        for s in out.sessions.iter().filter(|s| s.is_success()) {
            assert_eq!(s.result.unwrap().value(), 24 * u128::from(s.session));
        }
    }

    #[test]
    fn batch_isolation_across_pf() {
        let program = build_sum_program(&cfg(3));
        let f = PrimeModulus::default();
        let inputs: Vec<Vec<FieldElement>> = (0..40u128).map(|s| vec![f.element(s), f.element(2 * s), f.element(7)]).collect();
        let run = |pf| {
            let mut net = network(3, LinkParams::default(), 5);
            run_batch(&program, &SessionBatch::new(40, pf).unwrap(), &mut FixedInputs(inputs.clone()), &mut net, &SimulationOptions::default())
                .unwrap()
        };
        let a = run(1);
        let b = run(20);
        for (x, y) in a.sessions.iter().zip(&b.sessions) {
            assert_eq!(x.result, y.result);
            assert_eq!(x.counters, y.counters);
        }
        assert!(b.duration_ns() <= a.duration_ns());
    }

    #[test]
    fn lanes_chain_previous_results() {
        let program = build_sum_program(&cfg(3));
        let f = PrimeModulus::default();
        let mut workload = |_s: SessionId, _lane: usize, prev: Option<FieldElement>| {
            vec![f.element(1), f.element(1), prev.unwrap_or(f.zero())]
        };
        let mut net = network(3, LinkParams::default(), 5);
        let out = run_batch(&program, &SessionBatch::new(12, 3).unwrap(), &mut workload, &mut net, &free()).unwrap();
        let lanes = out.lane_results();
        assert_eq!(lanes.len(), 3);
        assert!(lanes.values().all(|v| v.value() == 8));
    }

    #[test]
    fn failures_are_reported_per_session() {
        let link = LinkParams::from_configured(16.0, 1000.0, 0.2).unwrap();
        let mut net = network(3, link, 11);
        let program = build_sum_program(&cfg(3));
        let mut workload = |_: SessionId, _: usize, _: Option<FieldElement>| elements(&[1, 2, 3]);
        let out = run_batch(&program, &SessionBatch::new(300, 10).unwrap(), &mut workload, &mut net, &free()).unwrap();
        assert_eq!(out.sessions.len(), 300);
        assert!(out.failures() > 0);
        assert!(out.sessions.iter().filter(|s| s.is_success()).all(|s| s.result.unwrap().value() == 6));
        let failed = out.sessions.iter().find(|s| !s.is_success()).unwrap();
        assert!(failed.result.unwrap_err().0 <= 1);
    }

    #[test]
    fn simulation_is_deterministic() {
        let program = build_product_program(&cfg(3));
        let run = || {
            let link = LinkParams::from_configured(50.0, 10.0, 0.05).unwrap();
            let mut net = network(3, link, 99);
            let mut workload = |s: SessionId, _: usize, _: Option<FieldElement>| elements(&[2, 3, u128::from(s) + 1]);
            run_batch(&program, &SessionBatch::new(30, 5).unwrap(), &mut workload, &mut net, &SimulationOptions::default()).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn network_size_must_match() {
        let mut net = network(4, LinkParams::default(), 0);
        let err = run_session(&build_sum_program(&cfg(3)), &elements(&[1, 2, 3]), &mut net, &free());
        assert!(matches!(err, Err(EngineError::InvalidBatch(_))));
        let mut net = network(3, LinkParams::default(), 0);
        let err = run_session(&build_sum_program(&cfg(3)), &elements(&[1, 2]), &mut net, &free());
        assert!(matches!(err, Err(EngineError::InputCount { .. })));
    }

    #[test]
    fn plan_programs_run() {
        let c = cfg(4);
        let program = ProtocolProgram::parse_plan("close\nmul\nadd\nmul\nopen", &c).unwrap();
        let inputs = elements(&[2, 3, 4, 5]);
        let mut net = network(4, LinkParams::default(), 0);
        let out = run_session(&program, &inputs, &mut net, &free()).unwrap();
        assert_eq!(out.result.unwrap(), program.evaluate_plaintext(&inputs));
        assert_eq!(out.result.unwrap().value(), (2 * 3 + 4) * 5);
        assert_eq!(out.messages() as usize, program.total_messages());
    }
}
