//! Run drivers: asynchronous discrete-event simulation, synchronous lockstep
//! rounds, a threaded backend, and the centralized benchmark.

mod metrics;
mod report;
mod sim;
mod sync;
mod threaded;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::agent::IterationRecord;
use crate::case::{classify_all, PowerCase, Partition, RegionId};
use crate::centralized::solve_centralized;
use crate::error::{Error, Result};
use crate::io::{Backend, ComputeModel, LatencyModel, Mode, RunConfig};
use crate::subproblem::LocalSolution;

pub use metrics::{compute_metrics, merge_solution, Metrics, Schedule};
pub use report::{report_rows, write_report, ReportRow, RunSummary};
pub use sim::run_async;
pub use sync::run_sync;
pub use threaded::run_threaded;

/// Simulated time in nanoseconds.
pub type Nanos = u64;

pub(crate) fn ms_to_ns(ms: f64) -> Nanos {
    (ms.max(0.0) * 1e6).round() as Nanos
}

pub(crate) fn ns_to_ms(ns: Nanos) -> f64 {
    ns as f64 / 1e6
}

/// Message sender or receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Region(RegionId),
    Controller,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Report,
    Reply,
    Delta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Wake {
        t_ns: Nanos,
        region: RegionId,
        k: usize,
    },
    Solve {
        t_ns: Nanos,
        #[serde(flatten)]
        record: IterationRecord,
    },
    Delivery {
        t_ns: Nanos,
        kind: MessageKind,
        from: Endpoint,
        to: Endpoint,
    },
    Match {
        t_ns: Nanos,
        first: RegionId,
        second: RegionId,
    },
    GlobalConvergence {
        t_ns: Nanos,
    },
}

impl TraceEvent {
    pub fn time(&self) -> Nanos {
        match *self {
            TraceEvent::Wake { t_ns, .. }
            | TraceEvent::Solve { t_ns, .. }
            | TraceEvent::Delivery { t_ns, .. }
            | TraceEvent::Match { t_ns, .. }
            | TraceEvent::GlobalConvergence { t_ns } => t_ns,
        }
    }
}

/// Writes one JSON object per line.
pub fn write_trace(trace: &[TraceEvent], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |e: std::io::Error| Error::Io {
        path: path.display().to_string(),
        source: e,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = std::io::BufWriter::new(file);
    for ev in trace {
        let line = serde_json::to_string(ev).expect("trace events serialize");
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Time accounting of one region.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub region: RegionId,
    /// local solves performed
    pub updates: usize,
    pub compute_ms: f64,
    pub comm_ms: f64,
    pub idle_ms: f64,
    pub binary: bool,
    pub converged: bool,
}

impl RegionStats {
    pub fn total_ms(&self) -> f64 {
        self.compute_ms + self.comm_ms + self.idle_ms
    }
}

/// Same bookkeeping on the nanosecond clock, converted at the end.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Clock {
    pub compute: Nanos,
    pub comm: Nanos,
    pub idle: Nanos,
}

impl Clock {
    /// One finished wait: the part explained by message latency is
    /// communication, the rest idle.
    pub fn wait(&mut self, wait: Nanos, latency: Nanos) {
        let comm = wait.min(latency);
        self.comm += comm;
        self.idle += wait - comm;
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub mode: Mode,
    pub backend: Backend,
    pub seed: u64,
    pub zeta: usize,
    pub regions: usize,
    pub converged: bool,
    /// `Σ_r` true cost of each region's final solution
    pub final_objective: f64,
    pub per_region: Vec<RegionStats>,
    /// most updates of any region when global convergence was detected
    pub iterations_to_gc: Option<usize>,
    /// simulated (or, for the threaded backend, wall) time at termination
    pub wall_clock_sim_ms: f64,
    /// largest KKT residual over every local solve of the run
    pub max_kkt_residual: f64,
    #[serde(skip)]
    pub trace: Vec<TraceEvent>,
    pub region_solutions: Vec<LocalSolution>,
    pub solution: Schedule,
    /// branch-and-bound lower bound, centralized mode only
    pub lower_bound: Option<f64>,
}

/// Seeded per-edge latency streams. Node `R` is the controller.
#[derive(Debug, Clone)]
pub(crate) struct Latencies {
    model: LatencyModel,
    regions: usize,
    streams: Vec<ChaCha8Rng>,
}

impl Latencies {
    pub fn new(model: LatencyModel, regions: usize, seed: u64) -> Self {
        let n = regions + 1;
        let streams = (0..n * n)
            .map(|e| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(e as u64);
                rng
            })
            .collect();
        Self { model, regions, streams }
    }

    fn node(&self, e: Endpoint) -> usize {
        match e {
            Endpoint::Region(r) => r,
            Endpoint::Controller => self.regions,
        }
    }

    /// Next delay on the directed edge `from → to`.
    pub fn sample(&mut self, from: Endpoint, to: Endpoint) -> Nanos {
        let idx = self.node(from) * (self.regions + 1) + self.node(to);
        ms_to_ns(sample_latency(&self.model, &mut self.streams[idx]))
    }
}

/// One draw from `model`, in milliseconds.
pub fn sample_latency<R: Rng + ?Sized>(model: &LatencyModel, rng: &mut R) -> f64 {
    match *model {
        LatencyModel::Constant { ms } => ms,
        LatencyModel::Uniform { lo, hi } => {
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        }
        LatencyModel::Lognormal { mu, sigma } => LogNormal::new(mu, sigma).expect("validated parameters").sample(rng),
    }
}

/// Simulated compute durations.
#[derive(Debug, Clone)]
pub(crate) struct ComputeClock {
    model: ComputeModel,
    scale: Vec<f64>,
    streams: Vec<ChaCha8Rng>,
}

impl ComputeClock {
    pub fn new(config: &RunConfig, regions: usize) -> Self {
        let base = (regions + 1) * (regions + 1);
        Self {
            model: config.compute_model,
            scale: (0..regions).map(|r| config.scale_of(r)).collect(),
            streams: (0..regions)
                .map(|r| {
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                    rng.set_stream((base + r) as u64);
                    rng
                })
                .collect(),
        }
    }

    /// Duration of one solve by `region` that took `measured` of wall time.
    pub fn duration(&mut self, region: RegionId, binary: bool, measured: std::time::Duration) -> Nanos {
        let scale = self.scale[region];
        let ms = match self.model {
            ComputeModel::Measured => measured.as_secs_f64() * 1e3 * scale,
            ComputeModel::Synthetic {
                base_ms,
                jitter,
                binary_factor,
            } => {
                let j = if jitter > 0.0 {
                    self.streams[region].random_range(-jitter..jitter)
                } else {
                    0.0
                };
                let b = if binary { binary_factor } else { 1.0 };
                base_ms * scale * (1.0 + j) * b
            }
        };
        ms_to_ns(ms)
    }
}

/// Runs `config.mode` on `config.backend`.
pub fn run(case: &PowerCase, partition: &Partition, config: &RunConfig) -> Result<RunResult> {
    match (config.mode, config.backend) {
        (Mode::Async, Backend::Sim) => run_async(case, partition, config),
        (Mode::Async, Backend::Threaded) => run_threaded(case, partition, config),
        (Mode::Sync, _) => run_sync(case, partition, config),
        (Mode::Central, _) => run_central(case, partition, config),
    }
}

/// Centralized solve wrapped as a run result, one pseudo-region of compute.
pub fn run_central(case: &PowerCase, partition: &Partition, config: &RunConfig) -> Result<RunResult> {
    config.validate()?;
    let started = Instant::now();
    let central = solve_centralized(case, config)?;
    let ms = started.elapsed().as_secs_f64() * 1e3;
    let part = Partition::single(case);
    let views = classify_all(case, &part)?;
    let solution = merge_solution(&views, std::slice::from_ref(&central.solution));
    let _ = partition;
    Ok(RunResult {
        mode: Mode::Central,
        backend: config.backend,
        seed: config.seed,
        zeta: config.zeta,
        regions: 1,
        converged: true,
        final_objective: central.gamma,
        per_region: vec![RegionStats {
            region: 0,
            updates: 1,
            compute_ms: ms,
            comm_ms: 0.0,
            idle_ms: 0.0,
            binary: true,
            converged: true,
        }],
        iterations_to_gc: Some(1),
        wall_clock_sim_ms: ms,
        max_kkt_residual: central.solution.kkt_residual,
        trace: Vec::new(),
        region_solutions: vec![central.solution],
        solution,
        lower_bound: Some(central.lower_bound),
    })
}

pub(crate) fn finish(
    config: &RunConfig,
    views: &[crate::case::RegionView],
    solutions: Vec<LocalSolution>,
    per_region: Vec<RegionStats>,
    converged: bool,
    wall_ns: Nanos,
    max_kkt: f64,
    trace: Vec<TraceEvent>,
) -> RunResult {
    let solution = merge_solution(views, &solutions);
    RunResult {
        mode: config.mode,
        backend: config.backend,
        seed: config.seed,
        zeta: config.zeta,
        regions: views.len(),
        converged,
        final_objective: solutions.iter().map(|s| s.obj_true).sum(),
        iterations_to_gc: converged.then(|| per_region.iter().map(|s| s.updates).max().unwrap_or(0)),
        per_region,
        wall_clock_sim_ms: ns_to_ms(wall_ns),
        max_kkt_residual: max_kkt,
        trace,
        region_solutions: solutions,
        solution,
        lower_bound: None,
    }
}

pub(crate) fn check_inputs(case: &PowerCase, partition: &Partition, config: &RunConfig) -> Result<Vec<crate::case::RegionView>> {
    config.validate()?;
    let violations = crate::case::validate_case(case);
    if !violations.is_empty() {
        return Err(Error::InvalidCase(violations));
    }
    classify_all(case, partition)
}

/// Inverse of [`write_trace`].
pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceEvent>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                msg: e.to_string(),
            })
        })
        .collect()
}

