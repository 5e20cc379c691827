//! Single-threaded discrete-event simulation of the asynchronous protocol.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::agent::{Agent, DeltaTuple, IterationRecord, Weighting};
use crate::case::{region_graph, Partition, PowerCase, RegionId};
use crate::controller::{ControllerReply, ControllerState, RegionReport};
use crate::error::Result;
use crate::io::RunConfig;
use crate::subproblem::LocalSolution;

use super::{
    check_inputs, finish, ns_to_ms, Clock, ComputeClock, Endpoint, Latencies, MessageKind, Nanos, RegionStats,
    RunResult, TraceEvent,
};

enum Event {
    Wake(RegionId),
    SolveDone(RegionId, RegionReport),
    Report(RegionReport),
    Reply(RegionId, ControllerReply),
    Delta(DeltaTuple),
}

struct Scheduled {
    t: Nanos,
    seq: u64,
    ev: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.t, self.seq) == (other.t, other.seq)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    // min-heap on (t, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        (other.t, other.seq).cmp(&(self.t, self.seq))
    }
}

#[derive(Default)]
struct Queue {
    heap: BinaryHeap<Scheduled>,
    seq: u64,
}

impl Queue {
    fn push(&mut self, t: Nanos, ev: Event) {
        self.seq += 1;
        self.heap.push(Scheduled { t, seq: self.seq, ev });
    }
}

/// Driver-side bookkeeping for one agent's current iteration.
#[derive(Default)]
struct Slot {
    clock: Clock,
    started: Nanos,
    compute: Nanos,
    /// latency along the report → reply → exchange path
    latency: Nanos,
    solved: bool,
    replied: bool,
    buffered: Option<DeltaTuple>,
    record: Option<IterationRecord>,
    published: Option<LocalSolution>,
    updates: usize,
}

impl Slot {
    fn solve_end(&self) -> Nanos {
        self.started + self.compute
    }
}

/// Asynchronous run on the simulated clock. Stops at global convergence or
/// when any region reaches `max_iters` (then `converged` is false).
pub fn run_async(case: &PowerCase, partition: &Partition, config: &RunConfig) -> Result<RunResult> {
    let views = check_inputs(case, partition, config)?;
    let n = views.len();
    let graph = region_graph(&views);
    let mut agents: Vec<Agent> = views
        .iter()
        .map(|v| Agent::new(v.clone(), config, Weighting::Adaptive, true))
        .collect();
    let mut ctl = ControllerState::new(n, case.horizon);
    let mut lat = Latencies::new(config.latency_model, n, config.seed);
    let mut compute = ComputeClock::new(config, n);
    let mut slots: Vec<Slot> = (0..n).map(|_| Slot::default()).collect();
    let mut trace = Vec::new();
    let mut q = Queue::default();
    let mut max_kkt = 0.0_f64;
    for r in 0..n {
        q.push(0, Event::Wake(r));
    }

    let mut converged = false;
    let mut now = 0;
    while let Some(Scheduled { t, ev, .. }) = q.heap.pop() {
        now = t;
        match ev {
            Event::Wake(r) => {
                trace.push(TraceEvent::Wake { t_ns: now, region: r, k: agents[r].k });
                let began = agents[r].begin_iteration()?;
                let d = compute.duration(r, agents[r].kappa.flag(), began.elapsed);
                let mut record = began.record;
                record.solve_ms = ns_to_ms(d);
                max_kkt = max_kkt.max(record.kkt_residual);
                let s = &mut slots[r];
                s.started = now;
                s.compute = d;
                s.latency = 0;
                s.solved = false;
                s.replied = false;
                s.record = Some(record);
                q.push(now + d, Event::SolveDone(r, began.report));
            }
            Event::SolveDone(r, report) => {
                let s = &mut slots[r];
                if let Some(record) = s.record.take() {
                    trace.push(TraceEvent::Solve { t_ns: now, record });
                }
                s.clock.compute += s.compute;
                s.solved = true;
                s.updates += 1;
                s.published = agents[r].last_solution.clone();
                let l = lat.sample(Endpoint::Region(r), Endpoint::Controller);
                s.latency += l;
                q.push(now + l, Event::Report(report));
            }
            Event::Report(report) => {
                let r = report.region;
                trace.push(delivery(now, MessageKind::Report, Endpoint::Region(r), Endpoint::Controller));
                let replies = ctl.on_report(&report, &graph)?;
                if replies.len() == 2 {
                    trace.push(TraceEvent::Match {
                        t_ns: now,
                        first: replies[0].0,
                        second: replies[1].0,
                    });
                }
                if ctl.check_gc() {
                    trace.push(TraceEvent::GlobalConvergence { t_ns: now });
                    converged = true;
                    break;
                }
                for (to, reply) in replies {
                    let l = lat.sample(Endpoint::Controller, Endpoint::Region(to));
                    slots[to].latency += l;
                    q.push(now + l, Event::Reply(to, reply));
                }
            }
            Event::Reply(r, reply) => {
                trace.push(delivery(now, MessageKind::Reply, Endpoint::Controller, Endpoint::Region(r)));
                slots[r].replied = true;
                if let Some(delta) = agents[r].on_reply(&reply)? {
                    let to = delta.to;
                    let l = lat.sample(Endpoint::Region(r), Endpoint::Region(to));
                    slots[to].latency += l;
                    q.push(now + l, Event::Delta(delta));
                    match slots[r].buffered.take() {
                        Some(d) => agents[r].on_delta(&d)?,
                        None => continue,
                    }
                }
                if complete(r, now, &mut agents, &mut slots, &mut q, config.max_iters)? {
                    break;
                }
            }
            Event::Delta(delta) => {
                let r = delta.to;
                trace.push(delivery(now, MessageKind::Delta, Endpoint::Region(delta.from), Endpoint::Region(r)));
                // the partner's values are applied only after this region has
                // sent its own, so both sides exchange pre-update duals
                if slots[r].replied {
                    agents[r].on_delta(&delta)?;
                    if complete(r, now, &mut agents, &mut slots, &mut q, config.max_iters)? {
                        break;
                    }
                } else {
                    slots[r].buffered = Some(delta);
                }
            }
        }
    }

    // close every region's books at the stopping time
    for s in slots.iter_mut() {
        if s.solved {
            s.clock.wait(now - s.solve_end(), s.latency);
        } else {
            s.clock.compute += now - s.started;
        }
    }

    let per_region = slots
        .iter()
        .enumerate()
        .map(|(r, s)| RegionStats {
            region: r,
            updates: s.updates,
            compute_ms: ns_to_ms(s.clock.compute),
            comm_ms: ns_to_ms(s.clock.comm),
            idle_ms: ns_to_ms(s.clock.idle),
            binary: agents[r].kappa.flag(),
            converged: ctl.xi[r] && ctl.kappa[r],
        })
        .collect();
    let solutions = slots
        .into_iter()
        .zip(&agents)
        .map(|(s, a)| s.published.or_else(|| a.last_solution.clone()).expect("every region solved"))
        .collect();
    Ok(finish(config, &views, solutions, per_region, converged, now, max_kkt, trace))
}

fn delivery(t: Nanos, kind: MessageKind, from: Endpoint, to: Endpoint) -> TraceEvent {
    TraceEvent::Delivery { t_ns: t, kind, from, to }
}

/// Ends region `r`'s iteration at `now`. True when the run must stop.
fn complete(
    r: RegionId,
    now: Nanos,
    agents: &mut [Agent],
    slots: &mut [Slot],
    q: &mut Queue,
    max_iters: usize,
) -> Result<bool> {
    agents[r].complete_iteration()?;
    let s = &mut slots[r];
    s.clock.wait(now - s.solve_end(), s.latency);
    // the next iteration starts now; nothing of it is accounted yet
    s.started = now;
    s.compute = 0;
    s.latency = 0;
    s.solved = false;
    s.replied = false;
    if agents[r].k >= max_iters {
        return Ok(true);
    }
    q.push(now, Event::Wake(r));
    Ok(false)
}
