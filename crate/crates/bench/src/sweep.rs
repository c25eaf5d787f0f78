//! Runs the distance-averaging workload over every cell of a sweep.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smc_core::analysis::RunMetrics;
use smc_core::costmodel::{predict_session, ScenarioModel};
use smc_core::engine::{
    run_batch, run_local_cluster, session_seed, ComputeProfile, SimulationOptions, SocketRunOptions, Workload,
};
use smc_core::transport::{LinkParams, NetworkConfig, SessionId, SimulatedNetwork, TransportCounters};
use smc_core::{EngineError, FieldElement, PrimeModulus, SessionBatch};
use thiserror::Error;

use crate::config::{Cell, ConfigError, Mode, SweepConfig};
use crate::traces::{encode_distance, traces_for_parties, GpsTrace, TraceError, FIXED_POINT_SCALE};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("cell n={n} latency={latency_ms} rate={rate_mbit} loss={loss} pf={pf}: {reason}")]
    Oracle { n: usize, latency_ms: f64, rate_mbit: f64, loss: f64, pf: usize, reason: String },
    #[error("state file {}: {reason}", path.display())]
    State { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Session inputs for the distance-averaging use case.
///
/// Parties `1..n-1` are devices submitting the distance covered since the
/// previous session; party `n` is the statistics server. For the sum protocol
/// the server inputs the running sum its lane produced so far, so the lane's
/// last result is the lane total. Other programs get a distance from every
/// party and no chaining.
#[derive(Debug, Clone)]
pub struct DistanceWorkload {
    streams: Vec<Vec<FieldElement>>,
    modulus: PrimeModulus,
    chain: bool,
}

impl DistanceWorkload {
    pub fn new(
        traces: &[GpsTrace],
        n: usize,
        sessions: u32,
        modulus: PrimeModulus,
        chain: bool,
    ) -> Result<Self, TraceError> {
        let streams = traces_for_parties(traces, n)
            .into_iter()
            .map(|t| {
                t.distances()?
                    .into_iter()
                    .map(|m| encode_distance(m, &modulus, n, sessions))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { streams, modulus, chain })
    }

    /// Encoded distance party `party` submits in `session`.
    pub fn distance(&self, party: usize, session: SessionId) -> FieldElement {
        let s = &self.streams[party - 1];
        s[session as usize % s.len()]
    }

    fn device_count(&self) -> usize {
        if self.chain {
            self.streams.len() - 1
        } else {
            self.streams.len()
        }
    }

    /// Sum of the device inputs of one session, in the clear.
    pub fn submitted(&self, session: SessionId) -> FieldElement {
        (1..=self.device_count()).fold(self.modulus.zero(), |acc, p| acc + self.distance(p, session))
    }
}

impl Workload for DistanceWorkload {
    fn inputs(&mut self, session: SessionId, _lane: usize, previous: Option<FieldElement>) -> Vec<FieldElement> {
        let mut v: Vec<FieldElement> = (1..=self.device_count()).map(|p| self.distance(p, session)).collect();
        if self.chain {
            v.push(previous.unwrap_or(self.modulus.zero()));
        }
        v
    }
}

/// One repetition of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Repetition {
    pub metrics: RunMetrics,
    /// Sum protocol only: the statistics server's running sums, per lane.
    pub lane_totals: BTreeMap<usize, FieldElement>,
    /// Sum protocol only: the average distance from the SMC totals and from
    /// the plaintext inputs, in meters.
    pub smc_average_m: Option<f64>,
    pub plaintext_average_m: Option<f64>,
}

fn derive_seed(seed: u64, cell: usize, rep: u32, stream: u64) -> u64 {
    session_seed(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15), cell as u32, rep as usize)
}

/// Runs `cfg.sessions` sessions of `cell` and checks every result against the
/// plaintext evaluation.
pub fn run_repetition(
    cfg: &SweepConfig,
    cell_index: usize,
    cell: &Cell,
    rep: u32,
    traces: &[GpsTrace],
) -> Result<Repetition, SweepError> {
    let modulus = PrimeModulus::default();
    let program = cfg.protocol.build(cell.n)?;
    let chain = cfg.protocol.is_sum();
    let workload = DistanceWorkload::new(traces, cell.n, cfg.sessions, modulus, chain)?;
    let batch = SessionBatch::new(cfg.sessions, cell.pf)?;
    let oracle_err = |reason: String| SweepError::Oracle {
        n: cell.n,
        latency_ms: cell.latency_ms,
        rate_mbit: cell.rate_mbit,
        loss: cell.loss,
        pf: cell.pf,
        reason,
    };
    let link = LinkParams::from_configured(cell.latency_ms, cell.rate_mbit, cell.loss)
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;

    let (results, counters, duration_ns, failures, profile): (BTreeMap<SessionId, Option<FieldElement>>, Vec<TransportCounters>, u64, u64, ComputeProfile) =
        match cfg.mode {
            Mode::Simulate => {
                let config = NetworkConfig::new(cell.n, link).with_seed(derive_seed(cfg.seed, cell_index, rep, 1));
                let mut net = SimulatedNetwork::new(config).map_err(EngineError::from)?;
                let options = SimulationOptions { seed: derive_seed(cfg.seed, cell_index, rep, 2), modulus, ..SimulationOptions::default() };
                let mut w = workload.clone();
                let out = run_batch(&program, &batch, &mut w, &mut net, &options)?;
                for s in &out.sessions {
                    if let Ok(v) = s.result {
                        if v != program.evaluate_plaintext(&s.inputs) {
                            return Err(oracle_err(format!("session {} disagrees with the plaintext result", s.session)));
                        }
                    }
                }
                let results = out.sessions.iter().map(|s| (s.session, s.result.ok())).collect();
                (results, out.counters.clone(), out.duration_ns(), out.failures() as u64, options.profile)
            }
            Mode::Sockets => {
                let options = SocketRunOptions { seed: derive_seed(cfg.seed, cell_index, rep, 2), modulus, ..SocketRunOptions::default() };
                let out = run_local_cluster(&program, &batch, |_| workload.clone(), &options)?;
                let agreed = out.results()?;
                // Replay the lanes in the clear to get every session's inputs.
                let mut replay = workload.clone();
                let mut previous: Vec<Option<FieldElement>> = vec![None; batch.pf];
                for (&s, &v) in &agreed {
                    let lane = batch.lane_of(s);
                    let inputs = replay.inputs(s, lane, previous[lane]);
                    if v != program.evaluate_plaintext(&inputs) {
                        return Err(oracle_err(format!("session {s} disagrees with the plaintext result")));
                    }
                    previous[lane] = Some(v);
                }
                if agreed.len() != cfg.sessions as usize {
                    return Err(oracle_err(format!("{} of {} sessions finished", agreed.len(), cfg.sessions)));
                }
                let counters = out.parties.iter().map(|p| p.counters).collect();
                let cfg_t = program.cfg();
                let profile = ComputeProfile::measure(cfg_t, &modulus, 1);
                let results = agreed.into_iter().map(|(s, v)| (s, Some(v))).collect();
                (results, counters, out.elapsed.as_nanos() as u64, 0, profile)
            }
        };

    let mut lane_totals = BTreeMap::new();
    let (mut smc_average_m, mut plaintext_average_m) = (None, None);
    if chain {
        for (&s, v) in &results {
            if let Some(v) = v {
                lane_totals.insert(batch.lane_of(s), *v);
            }
        }
        let total = lane_totals.values().fold(modulus.zero(), |acc, v| acc + *v);
        let oracle = results
            .iter()
            .filter(|(_, v)| v.is_some())
            .fold(modulus.zero(), |acc, (&s, _)| acc + workload.submitted(s));
        if total != oracle {
            return Err(oracle_err(format!("running sum {total} differs from plaintext sum {oracle}")));
        }
        let submissions = results.values().filter(|v| v.is_some()).count() * (cell.n - 1);
        if submissions > 0 {
            let avg = |v: FieldElement| v.value() as f64 / FIXED_POINT_SCALE / submissions as f64;
            smc_average_m = Some(avg(total));
            plaintext_average_m = Some(avg(oracle));
        }
    }

    let prediction = predict_session(
        &program,
        &ScenarioModel { link, profile, modulus, sequential_input: cfg.mode == Mode::Simulate },
    );
    let waves = u64::from(cfg.sessions).div_ceil(cell.pf as u64);
    let sum = |f: fn(&TransportCounters) -> u64| counters.iter().map(f).sum::<u64>();
    let metrics = RunMetrics {
        n: cell.n,
        latency_ms: cell.latency_ms,
        rate_mbit: cell.rate_mbit,
        loss: cell.loss,
        pf: cell.pf,
        sessions: cfg.sessions,
        repetition: rep,
        duration_ms: duration_ns as f64 / 1e6,
        bytes_per_peer: sum(|c| c.bytes_sent) as f64 / counters.len() as f64,
        messages: sum(|c| c.messages_sent),
        packets: sum(|c| c.packets_sent),
        retransmissions: sum(|c| c.retransmissions),
        failures,
        predicted_ms: (prediction.total_ns * waves) as f64 / 1e6,
    };
    Ok(Repetition { metrics, lane_totals, smc_average_m, plaintext_average_m })
}

/// Progress persisted after every repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepState {
    pub fingerprint: String,
    /// Repetitions finished, counted over the whole sweep in order.
    pub completed: usize,
    /// The statistics server's running sums after the last repetition,
    /// per lane, as decimal strings.
    pub running_sums: BTreeMap<usize, String>,
}

impl SweepState {
    pub fn load(path: &Path) -> Result<Option<Self>, SweepError> {
        match fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| SweepError::State { path: path.to_path_buf(), reason: e.to_string() }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn store(&self, path: &Path) -> Result<(), SweepError> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_string_pretty(self).expect("state serializes"))?;
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    pub state_path: Option<PathBuf>,
}

#[derive(Debug, Default)]
pub struct SweepSummary {
    pub rows: Vec<RunMetrics>,
    /// Repetitions skipped because a state file said they were done.
    pub skipped: usize,
    /// Cells that could not be completed, with the reason.
    pub hard_failures: Vec<String>,
}

/// Runs every repetition of every cell in order and hands each row to
/// `on_row` as soon as it exists. A cell whose run errors is recorded in
/// `hard_failures` and the sweep moves on.
pub fn run_sweep(
    cfg: &SweepConfig,
    traces: &[GpsTrace],
    options: &SweepOptions,
    mut on_row: impl FnMut(&RunMetrics) -> Result<(), SweepError>,
) -> Result<SweepSummary, SweepError> {
    cfg.validate()?;
    let fingerprint = cfg.fingerprint();
    let mut skip = 0;
    if let Some(path) = &options.state_path {
        if let Some(state) = SweepState::load(path)? {
            if state.fingerprint != fingerprint {
                return Err(SweepError::State { path: path.clone(), reason: "written by a different sweep".into() });
            }
            skip = state.completed;
        }
    }
    let mut summary = SweepSummary { skipped: skip, ..SweepSummary::default() };
    let mut unit = 0;
    for (index, cell) in cfg.cells().iter().enumerate() {
        for rep in 0..cfg.reps {
            unit += 1;
            if unit <= skip {
                continue;
            }
            match run_repetition(cfg, index, cell, rep, traces) {
                Ok(r) => {
                    on_row(&r.metrics)?;
                    if let Some(path) = &options.state_path {
                        let running_sums = r.lane_totals.iter().map(|(l, v)| (*l, v.value().to_string())).collect();
                        SweepState { fingerprint: fingerprint.clone(), completed: unit, running_sums }.store(path)?;
                    }
                    summary.rows.push(r.metrics);
                }
                Err(e) => {
                    summary.hard_failures.push(format!("repetition {rep}: {e}"));
                    // The rest of this cell would fail the same way.
                    unit += (cfg.reps - rep - 1) as usize;
                    break;
                }
            }
        }
    }
    Ok(summary)
}
