use std::hint::black_box;
use std::time::Instant;

use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::field::PrimeModulus;
use crate::sharing::{reconstruct, share_secret, ThresholdConfig};
use crate::SeededRng;

/// Local work done in one computation phase of one party.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Work {
    pub phases: u32,
    pub field_ops: u64,
}

impl Work {
    pub fn phase(field_ops: u64) -> Self {
        Self { phases: 1, field_ops }
    }
}

impl std::ops::Add for Work {
    type Output = Work;

    fn add(self, rhs: Work) -> Work {
        Work { phases: self.phases + rhs.phases, field_ops: self.field_ops + rhs.field_ops }
    }
}

/// Host computation costs charged by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComputeProfile {
    /// Fixed cost of one computation phase (scheduling, serialization,
    /// bookkeeping around the arithmetic).
    pub phase_overhead_ns: u64,
    pub field_op_ns: u64,
    /// Computation phases a host can run at the same time.
    pub lanes: usize,
}

impl Default for ComputeProfile {
    fn default() -> Self {
        Self { phase_overhead_ns: 400_000, field_op_ns: 500, lanes: 4 }
    }
}

impl ComputeProfile {
    /// No computation cost at all.
    pub fn free() -> Self {
        Self { phase_overhead_ns: 0, field_op_ns: 0, lanes: usize::MAX }
    }

    pub fn cost(&self, work: Work) -> u64 {
        u64::from(work.phases) * self.phase_overhead_ns + work.field_ops * self.field_op_ns
    }

    /// Times the local gate functions on this machine.
    pub fn measure(cfg: &ThresholdConfig, modulus: &PrimeModulus, lanes: usize) -> Self {
        let mut rng = SeededRng::seed_from_u64(0x5eed);
        let a = modulus.random(&mut rng);
        let b = modulus.random(&mut rng);
        let rounds = 200_000u64;
        let start = Instant::now();
        let mut acc = a;
        for _ in 0..rounds {
            acc = black_box(acc * b + a);
        }
        black_box(acc);
        let field_op_ns = (start.elapsed().as_nanos() as u64 / (2 * rounds)).max(1);

        let trials = 2_000u32;
        let start = Instant::now();
        for _ in 0..trials {
            let shares = share_secret(a, cfg, &mut rng);
            black_box(reconstruct(&shares, cfg).expect("valid shares"));
        }
        let phase_overhead_ns = start.elapsed().as_nanos() as u64 / u64::from(trials);
        Self { phase_overhead_ns, field_op_ns, lanes: lanes.max(1) }
    }
}
