//! Benchmark harness: GPS-trace workload, parameter sweeps and fit reports.

pub mod config;
pub mod report;
pub mod sweep;
pub mod traces;

pub use config::{Cell, ConfigError, Mode, ProtocolChoice, SweepConfig};
pub use report::{emit_report, Report};
pub use sweep::{run_repetition, run_sweep, DistanceWorkload, Repetition, SweepError, SweepOptions, SweepSummary};
pub use traces::{bundled_traces, load_traces, GpsTrace};
