//! Closed-form cost predictions for the round structure of a program.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{program_lambdas, ComputeProfile, PartySession, ProtocolProgram, Step, Work};
use crate::field::PrimeModulus;
use crate::sharing::Share;
use crate::transport::{transfer_time, LinkParams, FRAME_HEADER_LEN};

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("invalid cost parameters: {0}")]
    InvalidParams(String),
    #[error("loss probability {0} outside [0, 1)")]
    Domain(f64),
}

/// Inputs of the overall cost estimate. All durations in nanoseconds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostParams {
    /// One entry per computation step; `m = comp_costs.len()`.
    pub comp_costs: Vec<u64>,
    /// Cost of every communication step between two computation steps.
    pub comm_cost: u64,
}

impl CostParams {
    pub fn new(comp_costs: Vec<u64>, comm_cost: u64) -> Result<Self, CostError> {
        if comp_costs.is_empty() {
            return Err(CostError::InvalidParams("at least one computation step".into()));
        }
        Ok(Self { comp_costs, comm_cost })
    }

    pub fn m(&self) -> usize {
        self.comp_costs.len()
    }
}

/// Duration of one communication round: the slowest message decides.
/// `link_matrix[k][l]` is the duration of the message from party k to party
/// l; the diagonal is ignored.
pub fn round_comm_cost(link_matrix: &[Vec<u64>]) -> u64 {
    off_diagonal(link_matrix).max().unwrap_or(0)
}

/// Additive reading of a round, for comparison only: the busiest receiver
/// handles its incoming messages one after the other.
pub fn naive_round_comm_cost(link_matrix: &[Vec<u64>]) -> u64 {
    (0..link_matrix.len())
        .map(|l| (0..link_matrix.len()).filter(|&k| k != l).map(|k| link_matrix[k][l]).sum())
        .max()
        .unwrap_or(0)
}

fn off_diagonal(m: &[Vec<u64>]) -> impl Iterator<Item = u64> + '_ {
    m.iter().enumerate().flat_map(|(k, row)| row.iter().enumerate().filter(move |(l, _)| *l != k).map(|(_, c)| *c))
}

/// `Σ comp_costs + (m - 1) * comm_cost`.
pub fn total_cost(params: &CostParams) -> u64 {
    params.comp_costs.iter().sum::<u64>() + (params.m() as u64 - 1) * params.comm_cost
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Close,
    Add,
    Mul,
    Open,
}

/// Messages exchanged by one phase among `n` parties.
pub fn phase_message_count(phase: Phase, n: usize) -> usize {
    match phase {
        Phase::Add => 0,
        Phase::Close | Phase::Mul | Phase::Open => n * n - n,
    }
}

/// Messages of the left-fold product of `n` inputs: close, `n - 1`
/// multiplications, open.
pub fn product_message_total(n: usize) -> usize {
    (n + 1) * (n * n - n)
}

/// Trusted-third-party baseline: every party uploads its input in parallel
/// and the result comes back in parallel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TtpModel {
    pub n: usize,
    pub upload_ns: u64,
    pub download_ns: u64,
}

impl TtpModel {
    /// Both directions carry one value of `payload` bytes over `link`.
    pub fn over_link(n: usize, link: &LinkParams, payload: usize) -> Self {
        let t = transfer_time(payload, link);
        Self { n, upload_ns: t, download_ns: t }
    }
}

pub fn ttp_total_cost(model: &TtpModel) -> u64 {
    model.upload_ns + model.download_ns
}

/// `(n * L, 3n * L)` for network latency `latency`.
pub fn latency_interval(n: usize, latency: u64) -> (u64, u64) {
    (n as u64 * latency, 3 * n as u64 * latency)
}

/// Expected transmissions per packet, `1 / (1 - p)`.
pub fn loss_inflation(p: f64) -> Result<f64, CostError> {
    if !(0.0..1.0).contains(&p) {
        return Err(CostError::Domain(p));
    }
    Ok(1.0 / (1.0 - p))
}

/// Local work of each computation phase of party 1, obtained by running the
/// program once in memory.
pub fn phase_work(program: &ProtocolProgram, modulus: &PrimeModulus) -> Vec<Work> {
    let program = Arc::new(program.clone());
    let n = program.parties();
    let lambdas = program_lambdas(&program, modulus.zero()).expect("valid threshold config");
    let mut parties: Vec<_> = (1..=n)
        .map(|p| PartySession::new(0, p, Arc::clone(&program), Arc::clone(&lambdas), modulus.one(), 0))
        .collect();
    let mut work = Vec::new();
    let mut queue = Vec::new();
    for (i, p) in parties.iter_mut().enumerate() {
        let progress = p.start();
        if i == 0 {
            work.push(progress.work);
        }
        queue.extend(progress.outgoing);
    }
    while !queue.is_empty() {
        for m in std::mem::take(&mut queue) {
            parties[m.receiver - 1].receive(m.sender, &m.payload).expect("well-formed message");
        }
        for (i, p) in parties.iter_mut().enumerate() {
            while p.ready() {
                let progress = p.advance().expect("ready party advances");
                if i == 0 {
                    work.push(progress.work);
                }
                queue.extend(progress.outgoing);
            }
        }
    }
    work
}

/// Everything a per-session prediction depends on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioModel {
    pub link: LinkParams,
    pub profile: ComputeProfile,
    pub modulus: PrimeModulus,
    pub sequential_input: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub params: CostParams,
    /// Max-semantics estimate in nanoseconds.
    pub total_ns: u64,
    /// Additive estimate in nanoseconds, for comparison only.
    pub naive_ns: u64,
}

/// Predicts the duration of one session of `program` on uniform links.
///
/// With sequential input the input round becomes `n - 1` hand-offs of one
/// round trip each plus the last host's transfer, i.e. `2n - 1` communication
/// steps; every other round is one step.
pub fn predict_session(program: &ProtocolProgram, model: &ScenarioModel) -> Prediction {
    let n = program.parties();
    let message = FRAME_HEADER_LEN + Share::encoded_len(&model.modulus);
    let comm_cost = transfer_time(message, &model.link);
    let matrix = vec![vec![comm_cost; n]; n];
    let comm_cost = round_comm_cost(&matrix);
    let naive_round = naive_round_comm_cost(&matrix);

    let phases: Vec<u64> = phase_work(program, &model.modulus).iter().map(|w| model.profile.cost(*w)).collect();
    let input_steps = if model.sequential_input { 2 * n - 1 } else { 1 };
    let mut comp_costs = vec![phases[0]];
    comp_costs.extend(std::iter::repeat_n(0, input_steps - 1));
    comp_costs.extend(&phases[1..]);
    let params = CostParams::new(comp_costs, comm_cost).expect("at least one phase");
    let total_ns = total_cost(&params);

    let rounds = program.steps().iter().filter(|s| matches!(s, Step::MulRound { .. } | Step::Open)).count() as u64;
    let naive_input = if model.sequential_input { (n as u64 - 1) * 2 * comm_cost + naive_round } else { naive_round };
    let naive_ns = phases.iter().sum::<u64>() + naive_input + rounds * naive_round;
    Prediction { params, total_ns, naive_ns }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{build_product_program, build_sum_program};
    use crate::sharing::ThresholdConfig;
    use crate::transport::NANOS_PER_MS;

    const MS: u64 = NANOS_PER_MS;

    fn uniform(n: usize, c: u64) -> Vec<Vec<u64>> {
        vec![vec![c; n]; n]
    }

    #[test]
    fn round_cost_is_the_slowest_link() {
        assert_eq!(round_comm_cost(&uniform(4, 10 * MS)), 10 * MS);
        let mut m = uniform(4, 10 * MS);
        m[2][1] = 80 * MS;
        assert_eq!(round_comm_cost(&m), 80 * MS);
        assert_eq!(round_comm_cost(&[vec![0, 7], vec![7, 0]]), 7);
        let mut diag = uniform(3, 1);
        diag[1][1] = 1_000;
        assert_eq!(round_comm_cost(&diag), 1);
    }

    #[test]
    fn naive_round_cost_adds_up() {
        assert_eq!(naive_round_comm_cost(&uniform(4, 10)), 30);
    }

    #[test]
    fn total_cost_substitution() {
        assert_eq!(total_cost(&CostParams::new(vec![5 * MS], 99 * MS).unwrap()), 5 * MS);
        assert_eq!(total_cost(&CostParams::new(vec![MS; 3], 10 * MS).unwrap()), 23 * MS);
        assert_eq!(total_cost(&CostParams::new(vec![2, 3, 4], 0).unwrap()), 9);
        assert!(CostParams::new(vec![], 1).is_err());
    }

    #[test]
    fn message_counts() {
        assert_eq!(phase_message_count(Phase::Close, 3), 6);
        assert_eq!(phase_message_count(Phase::Open, 3), 6);
        assert_eq!(phase_message_count(Phase::Mul, 5), 20);
        for n in 2..20 {
            assert_eq!(phase_message_count(Phase::Add, n), 0);
        }
        assert_eq!(product_message_total(3), 24);
        assert_eq!(product_message_total(4), 60);
        let ratio = product_message_total(400) as f64 / product_message_total(200) as f64;
        assert!((ratio - 8.0).abs() < 0.1);
    }

    #[test]
    fn ttp_does_not_depend_on_n() {
        let m = |n| TtpModel { n, upload_ns: 50 * MS, download_ns: 50 * MS };
        assert_eq!(ttp_total_cost(&m(3)), 100 * MS);
        assert_eq!(ttp_total_cost(&m(15)), 100 * MS);
        assert_eq!(ttp_total_cost(&TtpModel { n: 3, upload_ns: 0, download_ns: 0 }), 0);
        let link = LinkParams::from_configured(16.0, 100.0, 0.0).unwrap();
        assert_eq!(ttp_total_cost(&TtpModel::over_link(3, &link, 19)), ttp_total_cost(&TtpModel::over_link(15, &link, 19)));
    }

    #[test]
    fn latency_interval_bounds() {
        assert_eq!(latency_interval(3, 50 * MS), (150 * MS, 450 * MS));
        assert_eq!(latency_interval(7, 0), (0, 0));
        let (a, b) = latency_interval(3, 16 * MS);
        assert_eq!(latency_interval(6, 16 * MS), (2 * a, 2 * b));
    }

    #[test]
    fn loss_inflation_is_geometric() {
        assert_eq!(loss_inflation(0.0).unwrap(), 1.0);
        assert!((loss_inflation(0.10).unwrap() - 1.111_111).abs() < 1e-6);
        assert_eq!(loss_inflation(0.5).unwrap(), 2.0);
        assert_eq!(loss_inflation(1.0), Err(CostError::Domain(1.0)));
        assert!(loss_inflation(-0.1).is_err());
    }

    #[test]
    fn phase_work_matches_round_structure() {
        let cfg = ThresholdConfig::with_default_threshold(5).unwrap();
        let f = PrimeModulus::default();
        assert_eq!(phase_work(&build_sum_program(&cfg), &f).len(), 3);
        assert_eq!(phase_work(&build_product_program(&cfg), &f).len(), 7);
    }

    #[test]
    fn sum_prediction_without_compute() {
        let cfg = ThresholdConfig::with_default_threshold(3).unwrap();
        let link = LinkParams { one_way_latency_ns: 8 * MS, rate_bps: u64::MAX, ..LinkParams::default() };
        let model = ScenarioModel {
            link,
            profile: ComputeProfile::free(),
            modulus: PrimeModulus::default(),
            sequential_input: true,
        };
        let p = predict_session(&build_sum_program(&cfg), &model);
        assert_eq!(p.params.m(), 7);
        assert_eq!(p.total_ns, 48 * MS);
        assert!(p.naive_ns > p.total_ns);
        let parallel = predict_session(&build_sum_program(&cfg), &ScenarioModel { sequential_input: false, ..model });
        assert_eq!(parallel.total_ns, 16 * MS);
    }
}
