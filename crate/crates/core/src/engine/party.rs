use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand_chacha::rand_core::SeedableRng;

use super::compute::Work;
use super::program::{ProtocolProgram, Step};
use super::EngineError;
use crate::field::FieldElement;
use crate::sharing::{reduction_coefficients, recombine, Share, SharePolynomial};
use crate::transport::{Message, PartyId, SessionId};
use crate::SeededRng;

/// Collects the shares one party expects from its peers in one round.
#[derive(Debug, Clone, Default)]
pub struct RoundBarrier {
    expected: BTreeSet<PartyId>,
    received: BTreeMap<PartyId, Share>,
}

impl RoundBarrier {
    pub fn new(expected: impl IntoIterator<Item = PartyId>) -> Self {
        Self { expected: expected.into_iter().collect(), received: BTreeMap::new() }
    }

    /// Records `share` from `from`; returns whether the round is now complete.
    pub fn offer(&mut self, from: PartyId, share: Share) -> Result<bool, EngineError> {
        if !self.expected.contains(&from) {
            return Err(EngineError::UnexpectedMessage { from, reason: "sender not expected in this round".into() });
        }
        if self.received.insert(from, share).is_some() {
            return Err(EngineError::UnexpectedMessage { from, reason: "duplicate share for round".into() });
        }
        Ok(self.is_complete())
    }

    pub fn is_complete(&self) -> bool {
        self.received.len() == self.expected.len()
    }

    pub fn missing(&self) -> Vec<PartyId> {
        self.expected.iter().filter(|p| !self.received.contains_key(p)).copied().collect()
    }

    pub fn into_shares(self) -> BTreeMap<PartyId, Share> {
        self.received
    }
}

/// Output of one local computation phase.
#[derive(Debug, Clone, PartialEq)]
pub struct Progress {
    pub outgoing: Vec<Message>,
    pub work: Work,
    /// Set once the final round has been interpolated.
    pub result: Option<FieldElement>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Awaiting {
    Inputs,
    Product,
    Output,
}

/// One party's view of one session: a transport-agnostic state machine that
/// turns delivered shares into outgoing messages.
#[derive(Debug, Clone)]
pub struct PartySession {
    session: SessionId,
    party: PartyId,
    program: Arc<ProtocolProgram>,
    lambdas: Arc<[FieldElement]>,
    input: FieldElement,
    rng: SeededRng,
    pc: usize,
    round: u16,
    awaiting: Option<Awaiting>,
    own: Option<Share>,
    barriers: BTreeMap<u16, RoundBarrier>,
    inputs: Vec<Share>,
    acc: Option<Share>,
    result: Option<FieldElement>,
}

/// Seed for the share randomness of one party in one session.
pub fn session_seed(seed: u64, session: SessionId, party: PartyId) -> u64 {
    let mut z = seed ^ (u64::from(session) << 16) ^ party as u64;
    // splitmix64 finalizer
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Lagrange weights at zero for the points `1..=n`, shared by all sessions of
/// one program.
pub fn program_lambdas(program: &ProtocolProgram, input: FieldElement) -> Result<Arc<[FieldElement]>, EngineError> {
    Ok(reduction_coefficients(program.cfg(), &input.modulus())?.into())
}

impl PartySession {
    pub fn new(
        session: SessionId,
        party: PartyId,
        program: Arc<ProtocolProgram>,
        lambdas: Arc<[FieldElement]>,
        input: FieldElement,
        seed: u64,
    ) -> Self {
        assert!((1..=program.parties()).contains(&party), "party {party} out of range");
        Self {
            session,
            party,
            program,
            lambdas,
            input,
            rng: SeededRng::seed_from_u64(session_seed(seed, session, party)),
            pc: 0,
            round: 0,
            awaiting: None,
            own: None,
            barriers: BTreeMap::new(),
            inputs: Vec::new(),
            acc: None,
            result: None,
        }
    }

    pub fn session(&self) -> SessionId {
        self.session
    }

    pub fn party(&self) -> PartyId {
        self.party
    }

    /// Communication rounds this party has fully received.
    pub fn rounds_completed(&self) -> usize {
        match (self.awaiting, self.result) {
            (_, Some(_)) => self.program.communication_rounds(),
            (None, None) => 0,
            (Some(_), None) => usize::from(self.round),
        }
    }

    pub fn result(&self) -> Option<FieldElement> {
        self.result
    }

    pub fn is_started(&self) -> bool {
        self.pc > 0
    }

    fn n(&self) -> usize {
        self.program.parties()
    }

    fn output_round(&self) -> u16 {
        (self.program.communication_rounds() - 1) as u16
    }

    fn peers(&self) -> impl Iterator<Item = PartyId> + '_ {
        (1..=self.n()).filter(move |&p| p != self.party)
    }

    fn emit(&self, shares: &[Share], per_receiver: bool) -> Vec<Message> {
        self.peers()
            .map(|receiver| {
                let share = if per_receiver { shares[receiver - 1] } else { shares[0] };
                let mut payload = Vec::with_capacity(32);
                share.encode(self.round, &mut payload);
                Message { sender: self.party, receiver, session: self.session, round: self.round, payload }
            })
            .collect()
    }

    /// First computation phase: share the private input.
    pub fn start(&mut self) -> Progress {
        assert!(!self.is_started(), "session already started");
        let cfg = *self.program.cfg();
        let shares = SharePolynomial::random(self.input, cfg.threshold(), &mut self.rng).shares(cfg.parties(), self.session);
        self.own = Some(shares[self.party - 1]);
        self.pc = 1;
        self.awaiting = Some(Awaiting::Inputs);
        let outgoing = self.emit(&shares, true);
        Progress { outgoing, work: Work::phase(sharing_ops(&cfg)), result: None }
    }

    /// Buffers a delivered payload. Shares for a later round are kept until
    /// this party gets there.
    pub fn receive(&mut self, from: PartyId, payload: &[u8]) -> Result<(), EngineError> {
        let bad = |reason: String| EngineError::UnexpectedMessage { from, reason };
        if from == self.party || from == 0 || from > self.n() {
            return Err(bad("sender is not a peer".into()));
        }
        if self.result.is_some() {
            return Err(bad("session already finished".into()));
        }
        let (share, round, rest) = Share::decode(payload, &self.input.modulus())?;
        if !rest.is_empty() {
            return Err(bad(format!("{} trailing bytes", rest.len())));
        }
        if share.session_tag != self.session {
            return Err(bad(format!("session tag {} in session {}", share.session_tag, self.session)));
        }
        if round > self.output_round() || (self.awaiting.is_some() && round < self.round) {
            return Err(bad(format!("share for round {round} while in round {}", self.round)));
        }
        let point = if round == self.output_round() { from } else { self.party };
        if usize::from(share.x) != point {
            return Err(bad(format!("share at point {} in round {round}", share.x)));
        }
        let expected: Vec<_> = self.peers().collect();
        self.barriers.entry(round).or_insert_with(|| RoundBarrier::new(expected)).offer(from, share)?;
        Ok(())
    }

    /// Whether every share of the awaited round has arrived.
    pub fn ready(&self) -> bool {
        self.awaiting.is_some()
            && self.result.is_none()
            && self.barriers.get(&self.round).is_some_and(RoundBarrier::is_complete)
    }

    /// Consumes the completed round and runs local steps up to the next
    /// communication round (or the end of the program).
    pub fn advance(&mut self) -> Result<Progress, EngineError> {
        if !self.ready() {
            return Err(EngineError::NotReady { session: self.session, party: self.party, round: self.round });
        }
        let barrier = self.barriers.remove(&self.round).expect("ready implies barrier");
        let mut received = barrier.into_shares();
        received.insert(self.party, self.own.take().expect("own contribution"));
        let ordered: Vec<Share> = received.into_values().collect();
        let n = self.n() as u64;
        let mut ops = 0;
        match self.awaiting.take().expect("ready implies awaiting") {
            Awaiting::Inputs => {
                self.acc = Some(ordered[0]);
                self.inputs = ordered;
            }
            Awaiting::Product => {
                self.acc = Some(recombine(&ordered, &self.lambdas)?);
                ops += 2 * n;
            }
            Awaiting::Output => {
                let value = ordered
                    .iter()
                    .fold(self.input.modulus().zero(), |acc, s| acc + self.lambdas[usize::from(s.x) - 1] * s.y);
                self.result = Some(value);
                return Ok(Progress { outgoing: Vec::new(), work: Work::phase(ops + 2 * n), result: Some(value) });
            }
        }
        self.round += 1;
        let cfg = *self.program.cfg();
        let program = Arc::clone(&self.program);
        while let Some(step) = program.steps().get(self.pc) {
            self.pc += 1;
            let acc = self.acc.expect("accumulator after input round");
            match *step {
                Step::Close => unreachable!("validated program has a single leading close"),
                Step::AddLocal { operand } => {
                    self.acc = Some(Share { y: acc.y + self.inputs[operand].y, ..acc });
                    ops += 1;
                }
                Step::MulRound { operand } => {
                    let raw = acc.y * self.inputs[operand].y;
                    let sub = SharePolynomial::random(raw, cfg.threshold(), &mut self.rng).shares(cfg.parties(), self.session);
                    self.own = Some(sub[self.party - 1]);
                    self.awaiting = Some(Awaiting::Product);
                    let outgoing = self.emit(&sub, true);
                    return Ok(Progress { outgoing, work: Work::phase(ops + 1 + sharing_ops(&cfg)), result: None });
                }
                Step::Open => {
                    self.own = Some(acc);
                    self.awaiting = Some(Awaiting::Output);
                    let outgoing = self.emit(&[acc], false);
                    return Ok(Progress { outgoing, work: Work::phase(ops), result: None });
                }
            }
        }
        unreachable!("validated program ends with open")
    }
}

/// Horner evaluation of a degree-t polynomial at n points.
fn sharing_ops(cfg: &crate::sharing::ThresholdConfig) -> u64 {
    2 * (cfg.parties() * cfg.threshold()) as u64
}
