use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use smc_bench::config::{ConfigError, Mode, ProtocolChoice, SweepConfig};
use smc_bench::report::emit_report;
use smc_bench::sweep::{run_sweep, SweepError, SweepOptions};
use smc_bench::traces::{bundled_traces, load_traces};
use smc_core::analysis::{load_results, RunMetrics};

/// Runs parameter sweeps of the secure-sum benchmark and fits the results.
#[derive(Debug, Parser)]
#[command(name = "smcbench", version)]
struct Cli {
    /// JSON file with any of the sweep keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    peers: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    latency_ms: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    rate_mbit: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    loss: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pf: Option<Vec<usize>>,
    /// Sessions per repetition.
    #[arg(long)]
    sessions: Option<u32>,
    #[arg(long)]
    reps: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// simulate or sockets
    #[arg(long)]
    mode: Option<String>,
    /// sum, product, or the path of a plan file
    #[arg(long)]
    protocol: Option<String>,
    /// Directory of timestamp,lat,lon CSV files; the bundled traces otherwise.
    #[arg(long)]
    traces: Option<PathBuf>,
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    /// Where to write the JSON fit report; a text table goes to stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Progress file; an interrupted sweep restarted with the same file
    /// continues after the last finished repetition.
    #[arg(long)]
    state: Option<PathBuf>,
    /// Skip the sweep and only report on an existing --out file.
    #[arg(long)]
    analyze_only: bool,
}

enum Failure {
    Config(String),
    Run(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<SweepError> for Failure {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Config(e) => Failure::Config(e.to_string()),
            SweepError::Trace(e) => Failure::Config(e.to_string()),
            e @ SweepError::State { .. } => Failure::Config(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

fn build_config(cli: &Cli) -> Result<SweepConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => SweepConfig::load(path)?,
        None => SweepConfig::default(),
    };
    macro_rules! apply {
        ($($field:ident),*) => {$(
            if let Some(v) = &cli.$field {
                cfg.$field = v.clone();
            }
        )*};
    }
    apply!(peers, latency_ms, rate_mbit, loss, pf, sessions, reps, seed);
    if let Some(m) = &cli.mode {
        cfg.mode = m.parse::<Mode>()?;
    }
    if let Some(p) = &cli.protocol {
        cfg.protocol = ProtocolChoice::parse(p);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open_output(path: &Path, append: bool) -> io::Result<(csv::Writer<File>, bool)> {
    let existing = append && path.metadata().is_ok_and(|m| m.len() > 0);
    let file = if existing { OpenOptions::new().append(true).open(path)? } else { File::create(path)? };
    Ok((csv::WriterBuilder::new().has_headers(!existing).from_writer(file), existing))
}

fn sweep(cli: &Cli) -> Result<bool, Failure> {
    let cfg = build_config(cli)?;
    let traces = match &cli.traces {
        Some(dir) => load_traces(dir).map_err(|e| Failure::Config(e.to_string()))?,
        None => bundled_traces(),
    };
    for t in &traces {
        for r in &t.rejected {
            eprintln!("{}: line {} rejected: {}", t.name, r.line, r.reason);
        }
    }
    let resuming = cli.state.as_ref().is_some_and(|p| p.exists());
    let (mut writer, _) =
        open_output(&cli.out, resuming).map_err(|e| Failure::Config(format!("{}: {e}", cli.out.display())))?;
    let options = SweepOptions { state_path: cli.state.clone() };
    let total = cfg.cells().len() * cfg.reps as usize;
    let mut done = 0;
    let summary = run_sweep(&cfg, &traces, &options, |row: &RunMetrics| {
        writer.serialize(row).map_err(|e| SweepError::Io(io::Error::other(e)))?;
        writer.flush()?;
        done += 1;
        eprintln!(
            "[{done}/{total}] n={} latency={} rate={} loss={} pf={} rep={} {:.3} ms/session, {} failures",
            row.n,
            row.latency_ms,
            row.rate_mbit,
            row.loss,
            row.pf,
            row.repetition,
            row.duration_per_session_ms(),
            row.failures
        );
        Ok(())
    })?;
    if summary.skipped > 0 {
        eprintln!("resumed after {} finished repetitions", summary.skipped);
    }
    for f in &summary.hard_failures {
        eprintln!("hard failure: {f}");
    }
    Ok(summary.hard_failures.is_empty())
}

fn report(cli: &Cli) -> Result<(), Failure> {
    let rows = load_results(&cli.out).map_err(|e| Failure::Config(format!("{}: {e}", cli.out.display())))?;
    let report = emit_report(&rows);
    print!("{}", report.render_text());
    if let Some(path) = &cli.report {
        let mut f = File::create(path).map_err(|e| Failure::Run(format!("{}: {e}", path.display())))?;
        f.write_all(report.to_json().as_bytes()).map_err(|e| Failure::Run(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = if cli.analyze_only { Ok(true) } else { sweep(&cli) }.and_then(|ok| report(&cli).map(|()| ok));
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
