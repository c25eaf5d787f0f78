//! Secret-sharing multiparty computation (BGW over Shamir shares) with a
//! deterministic simulated network, a socket transport and an analytic cost
//! model for the resulting round structure.

pub mod analysis;
pub mod costmodel;
pub mod engine;
pub mod field;
pub mod sharing;
pub mod transport;

pub use engine::{EngineError, ProtocolProgram, SessionBatch};
pub use field::{FieldElement, FieldError, PrimeModulus};
pub use sharing::{Share, SharePolynomial, SharingError, ThresholdConfig};

/// Seedable stream used for every random draw in the crate.
pub type SeededRng = rand_chacha::ChaCha20Rng;
