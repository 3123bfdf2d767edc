//! Command implementations behind the `hecovert` binary.

pub mod plot;

use std::fmt::Write as _;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};

use thiserror::Error;

use hecovert_core::control_sim::{format_sig, SimTrace};
use hecovert_core::scenario::{ScenarioConfig, ScenarioError};
use hecovert_core::verify::{
    p_succ_cumulative, p_succ_instant, run_detection_experiment, security_bits, success_bound, DetectionHistogram,
    DetectionMode, VerifyError,
};
use hecovert_netloop::observe::{controller_view, merge_controller_view, read_transcript, write_transcript};
use hecovert_netloop::{connect_plant, serve_attacker, serve_controller, AttackerReport, ControllerReport, NetError};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;
pub const EXIT_TRIPPED: u8 = 3;

/// Attack length used for the cumulative column of the probe table.
pub const PROBE_ATTACK_LEN: usize = 10;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Config(_) => EXIT_CONFIG,
            HarnessError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        HarnessError::Runtime(format!("{}: {e}", path.display()))
    }
}

impl From<ScenarioError> for HarnessError {
    fn from(e: ScenarioError) -> Self {
        if e.is_config() {
            HarnessError::Config(e.to_string())
        } else {
            HarnessError::Runtime(e.to_string())
        }
    }
}

impl From<NetError> for HarnessError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Scenario(e) => e.into(),
            other => HarnessError::Runtime(other.to_string()),
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, HarnessError> {
    ScenarioConfig::load(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

/// Where a trace and its plot go. `None` trace means standard output.
#[derive(Debug, Clone, Default)]
pub struct TraceOutputs {
    pub trace: Option<PathBuf>,
    pub plot: Option<PathBuf>,
}

impl TraceOutputs {
    /// Command-line paths take precedence over the config's.
    pub fn resolve(cli_trace: Option<PathBuf>, cli_plot: Option<PathBuf>, config: &ScenarioConfig) -> Self {
        Self {
            trace: cli_trace.or_else(|| config.output.trace.clone()),
            plot: cli_plot.or_else(|| config.output.plot.clone()),
        }
    }

    pub fn emit(&self, trace: &SimTrace<f64>) -> Result<(), HarnessError> {
        match &self.trace {
            Some(path) => write_file(path, &trace.to_csv())?,
            None => print!("{}", trace.to_csv()),
        }
        if let Some(path) = &self.plot {
            write_file(path, &plot::trace_svg(trace))?;
        }
        Ok(())
    }
}

/// Runs a scenario in-process and writes its outputs. The trace is written
/// even when verification trips.
pub fn cmd_simulate(config: &ScenarioConfig, outputs: &TraceOutputs) -> Result<SimTrace<f64>, HarnessError> {
    let scenario = config.resolve()?;
    let trace = scenario.run()?;
    outputs.emit(&trace)?;
    Ok(trace)
}

/// Exit status for a finished trace.
pub fn trace_status(trace: &SimTrace<f64>) -> u8 {
    if trace.tripped() {
        EXIT_TRIPPED
    } else {
        EXIT_OK
    }
}

/// Runs a detection experiment and writes its histogram as CSV.
pub fn cmd_montecarlo(
    lambda: usize,
    attack_len: usize,
    trials: usize,
    mode: DetectionMode,
    seed: u64,
    out: &Path,
) -> Result<DetectionHistogram, HarnessError> {
    let hist = run_detection_experiment(lambda, attack_len, trials, mode, seed).map_err(|e| match e {
        VerifyError::Experiment(msg) if trials > 0 => HarnessError::Runtime(msg),
        other => HarnessError::Config(other.to_string()),
    })?;
    write_file(out, &hist.to_csv())?;
    Ok(hist)
}

/// Detection percentages per step next to the geometric law.
pub fn detection_summary(hist: &DetectionHistogram) -> String {
    let expected = hist.expected_probabilities().unwrap_or_default();
    let mut out = String::new();
    let _ = writeln!(out, "lambda = {}, L = {}, {} trials", hist.lambda, hist.attack_len, hist.trials());
    let _ = writeln!(out, "{:>6}  {:>10}  {:>10}  {:>10}", "k*", "count", "observed", "expected");
    let labels = (1..=hist.attack_len).map(|j| j.to_string()).chain(["none".to_string()]);
    for ((label, count), p) in labels.zip(hist.bins()).zip(expected.iter().map(Some).chain(std::iter::repeat(None))) {
        let observed = 100.0 * count as f64 / hist.trials().max(1) as f64;
        let expected = p.map_or_else(|| "-".to_string(), |p| format!("{:.4}%", 100.0 * p));
        let _ = writeln!(out, "{label:>6}  {count:>10}  {:>9.4}%  {expected:>10}", observed);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRow {
    pub lambda: usize,
    pub p_instant: f64,
    pub bound: f64,
    pub p_cumulative: f64,
    pub bits: f64,
}

/// One row per even `λ ≤ lambda_max`.
pub fn cmd_probe(lambda_max: usize) -> Result<Vec<ProbeRow>, HarnessError> {
    if lambda_max < 2 {
        return Err(HarnessError::Config(format!("lambda-max must be at least 2, got {lambda_max}")));
    }
    (2..=lambda_max)
        .step_by(2)
        .map(|lambda| {
            let p_cumulative = p_succ_cumulative(lambda, PROBE_ATTACK_LEN)?;
            Ok(ProbeRow {
                lambda,
                p_instant: p_succ_instant(lambda)?,
                bound: success_bound(lambda)?,
                p_cumulative,
                bits: security_bits(p_cumulative),
            })
        })
        .collect::<Result<_, VerifyError>>()
        .map_err(|e| HarnessError::Config(e.to_string()))
}

pub fn probe_table(rows: &[ProbeRow]) -> String {
    let mut out = format!(
        "{:>6}  {:>12}  {:>12}  {:>12}  {:>8}\n",
        "lambda",
        "p_succ(1)",
        "2^(-l/2)",
        format!("p_succ({PROBE_ATTACK_LEN})"),
        "bits"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:>6}  {:>12}  {:>12}  {:>12}  {:>8.2}",
            r.lambda,
            format_sig(r.p_instant, 5),
            format_sig(r.bound, 5),
            format!("{:.2e}", r.p_cumulative),
            r.bits
        );
    }
    out
}

pub fn bind(addr: &str) -> Result<TcpListener, HarnessError> {
    TcpListener::bind(addr).map_err(|e| HarnessError::Runtime(format!("cannot listen on {addr}: {e}")))
}

/// Serves one session; `on_listen` runs once the socket is bound.
pub fn cmd_net_controller(
    listen: &str,
    transcript: Option<&Path>,
    on_listen: impl FnOnce(SocketAddr),
) -> Result<ControllerReport, HarnessError> {
    let listener = bind(listen)?;
    on_listen(listener.local_addr().map_err(|e| HarnessError::Runtime(e.to_string()))?);
    let report = serve_controller(&listener)?;
    if let Some(path) = transcript {
        let file = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
        write_transcript(&mut BufWriter::new(file), &report.transcript)?;
    }
    Ok(report)
}

pub fn cmd_net_attacker(
    listen: &str,
    upstream: &str,
    config: &ScenarioConfig,
    on_listen: impl FnOnce(SocketAddr),
) -> Result<AttackerReport, HarnessError> {
    let scenario = config.resolve()?;
    let listener = bind(listen)?;
    on_listen(listener.local_addr().map_err(|e| HarnessError::Runtime(e.to_string()))?);
    Ok(serve_attacker(&listener, upstream, &scenario)?)
}

/// Runs the plant against `connect`. A broken session still writes the
/// partial trace and then reports a runtime error.
pub fn cmd_net_plant(
    connect: &str,
    config: &ScenarioConfig,
    outputs: &TraceOutputs,
) -> Result<SimTrace<f64>, HarnessError> {
    let scenario = config.resolve()?;
    let outcome = connect_plant(connect, &scenario)?;
    outputs.emit(&outcome.trace)?;
    match outcome.error {
        Some(e) if !outcome.complete => {
            Err(HarnessError::Runtime(format!("session broken after {} steps: {e}", outcome.trace.len())))
        }
        _ => Ok(outcome.trace),
    }
}

/// Fills the controller-side columns of a plant trace from a controller
/// transcript, using the plant's key.
pub fn cmd_net_observe(
    config: &ScenarioConfig,
    transcript: &Path,
    trace: &Path,
    outputs: &TraceOutputs,
) -> Result<SimTrace<f64>, HarnessError> {
    let scenario = config.resolve()?;
    let file = fs::File::open(transcript).map_err(|e| HarnessError::io(transcript, e))?;
    let frames = read_transcript(&mut BufReader::new(file))?;
    let text = fs::read_to_string(trace).map_err(|e| HarnessError::io(trace, e))?;
    let mut trace = SimTrace::from_csv(&text).map_err(HarnessError::Runtime)?;
    merge_controller_view(&mut trace, &controller_view(&scenario, &frames)?)?;
    outputs.emit(&trace)?;
    Ok(trace)
}
