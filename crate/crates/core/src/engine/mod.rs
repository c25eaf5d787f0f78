//! Round-synchronized protocol execution over either transport.

mod compute;
mod party;
mod program;
mod simulate;
mod sockets;

use thiserror::Error;

pub use compute::{ComputeProfile, Work};
pub use party::{program_lambdas, session_seed, PartySession, Progress, RoundBarrier};
pub use program::{build_product_program, build_sum_program, ProtocolKind, ProtocolProgram, Step};
pub use simulate::{run_batch, run_session, BatchOutcome, SessionOutcome, SimulationOptions};
pub use sockets::{run_local_cluster, run_party, ClusterOutcome, PartyOutcome, SocketRunOptions};

use crate::field::FieldElement;
use crate::sharing::SharingError;
use crate::transport::{FailureReason, PartyId, SessionId, TransportError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid program: {0}")]
    InvalidProgram(String),
    #[error("expected {expected} inputs, got {got}")]
    InputCount { expected: usize, got: usize },
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("unexpected message from party {from}: {reason}")]
    UnexpectedMessage { from: PartyId, reason: String },
    #[error("party {party} of session {session} is still waiting for round {round}")]
    NotReady { session: SessionId, party: PartyId, round: u16 },
    #[error("session {session} failed in round {round} ({reason:?})")]
    SessionFailed { session: SessionId, round: u16, reason: FailureReason },
    #[error("parties of session {0} disagree on the result")]
    Inconsistent(SessionId),
    #[error("network went idle with {0} sessions unfinished")]
    Stalled(usize),
    #[error("party thread panicked")]
    PartyPanicked,
    #[error(transparent)]
    Sharing(#[from] SharingError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// `sessions` independent sessions, at most `pf` of them in flight at once.
///
/// Session `s` runs on lane `s % pf`; each lane starts its next session as
/// soon as the previous one finishes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionBatch {
    pub sessions: u32,
    pub pf: usize,
}

impl SessionBatch {
    pub fn new(sessions: u32, pf: usize) -> Result<Self, EngineError> {
        if sessions == 0 {
            return Err(EngineError::InvalidBatch("no sessions".into()));
        }
        if pf == 0 {
            return Err(EngineError::InvalidBatch("parallelization factor must be positive".into()));
        }
        Ok(Self { sessions, pf: pf.min(sessions as usize) })
    }

    pub fn lane_of(&self, session: SessionId) -> usize {
        session as usize % self.pf
    }

    pub(crate) fn first_of_lane(&self, lane: usize) -> Option<SessionId> {
        (lane < self.sessions as usize).then_some(lane as SessionId)
    }

    pub(crate) fn next_in_lane(&self, session: SessionId) -> Option<SessionId> {
        let next = session as u64 + self.pf as u64;
        (next < u64::from(self.sessions)).then_some(next as SessionId)
    }
}

/// Supplies the private inputs of every party for each session.
pub trait Workload {
    /// Inputs of parties `1..=n` for `session`. `previous` is the result of
    /// the last successful session on the same lane.
    fn inputs(&mut self, session: SessionId, lane: usize, previous: Option<FieldElement>) -> Vec<FieldElement>;
}

impl<F> Workload for F
where
    F: FnMut(SessionId, usize, Option<FieldElement>) -> Vec<FieldElement>,
{
    fn inputs(&mut self, session: SessionId, lane: usize, previous: Option<FieldElement>) -> Vec<FieldElement> {
        self(session, lane, previous)
    }
}

/// Precomputed inputs, one vector per session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedInputs(pub Vec<Vec<FieldElement>>);

impl Workload for FixedInputs {
    fn inputs(&mut self, session: SessionId, _lane: usize, _previous: Option<FieldElement>) -> Vec<FieldElement> {
        self.0[session as usize].clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lanes_partition_sessions() {
        let batch = SessionBatch::new(10, 3).unwrap();
        let mut seen = Vec::new();
        for lane in 0..3 {
            let mut s = batch.first_of_lane(lane);
            while let Some(id) = s {
                assert_eq!(batch.lane_of(id), lane);
                seen.push(id);
                s = batch.next_in_lane(id);
            }
        }
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn batch_validation() {
        assert!(SessionBatch::new(0, 1).is_err());
        assert!(SessionBatch::new(5, 0).is_err());
        assert_eq!(SessionBatch::new(5, 50).unwrap().pf, 5);
    }
}
