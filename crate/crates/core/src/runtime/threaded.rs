//! Concurrent backend: one thread per region and one for the controller,
//! talking only over channels. Timings are wall-clock; latencies are slept
//! by the sender, synthetic compute is slept by the solver.

use std::collections::BTreeMap;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};

use crate::agent::{Agent, DeltaTuple, Weighting};
use crate::case::{region_graph, Partition, PowerCase, RegionId};
use crate::controller::{ControllerReply, ControllerState, RegionReport};
use crate::error::{Error, Result};
use crate::io::RunConfig;
use crate::subproblem::LocalSolution;

use super::{
    check_inputs, finish, ns_to_ms, Clock, ComputeClock, Endpoint, Latencies, MessageKind, Nanos, RegionStats,
    RunResult, TraceEvent,
};

enum ToAgent {
    Reply(ControllerReply),
    Delta(DeltaTuple),
    Stop,
}

enum ToController {
    Report(RegionReport),
    /// the region hit `max_iters`
    Exhausted,
    Failed(Error),
}

struct AgentOutcome {
    agent: Agent,
    published: Option<LocalSolution>,
    clock: Clock,
    updates: usize,
    max_kkt: f64,
    events: Vec<TraceEvent>,
}

struct Ctx {
    start: Instant,
    lat: Latencies,
    compute: ComputeClock,
    max_iters: usize,
}

impl Ctx {
    fn now(&self) -> Nanos {
        self.start.elapsed().as_nanos() as Nanos
    }

    /// Sleeps one sampled delay; returns it.
    fn delay(&mut self, from: Endpoint, to: Endpoint) -> Nanos {
        let l = self.lat.sample(from, to);
        thread::sleep(Duration::from_nanos(l));
        l
    }
}

/// Asynchronous protocol on real threads.
pub fn run_threaded(case: &PowerCase, partition: &Partition, config: &RunConfig) -> Result<RunResult> {
    let views = check_inputs(case, partition, config)?;
    let n = views.len();
    let graph = region_graph(&views);
    let start = Instant::now();
    let (ctl_tx, ctl_rx) = unbounded::<(RegionId, ToController)>();
    let (agent_tx, agent_rx): (Vec<Sender<ToAgent>>, Vec<Receiver<ToAgent>>) = (0..n).map(|_| unbounded()).unzip();

    let outcomes = thread::scope(|scope| {
        let mut handles = Vec::with_capacity(n);
        for (r, rx) in agent_rx.into_iter().enumerate() {
            let agent = Agent::new(views[r].clone(), config, Weighting::Adaptive, true);
            let ctx = Ctx {
                start,
                lat: Latencies::new(config.latency_model, n, config.seed),
                compute: ComputeClock::new(config, n),
                max_iters: config.max_iters,
            };
            let peers = agent_tx.clone();
            let ctl = ctl_tx.clone();
            handles.push(scope.spawn(move || agent_loop(agent, ctx, rx, peers, ctl)));
        }
        drop(ctl_tx);
        let ctl = scope.spawn(|| controller_loop(n, case.horizon, &graph, ctl_rx, &agent_tx, start));
        let outcomes: Vec<AgentOutcome> = handles.into_iter().map(|h| h.join().expect("agent thread")).collect();
        let ctl = ctl.join().expect("controller thread");
        (outcomes, ctl)
    });
    let (outcomes, (ctl_state, ctl_events, stopped_at, failure)) = outcomes;
    if let Some(e) = failure {
        return Err(e);
    }

    let converged = ctl_state.gc;
    let mut trace: Vec<TraceEvent> = ctl_events;
    let mut max_kkt = 0.0_f64;
    let mut per_region = Vec::with_capacity(n);
    let mut solutions = Vec::with_capacity(n);
    for (r, o) in outcomes.into_iter().enumerate() {
        max_kkt = max_kkt.max(o.max_kkt);
        trace.extend(o.events);
        per_region.push(RegionStats {
            region: r,
            updates: o.updates,
            compute_ms: ns_to_ms(o.clock.compute),
            comm_ms: ns_to_ms(o.clock.comm),
            idle_ms: ns_to_ms(o.clock.idle),
            binary: o.agent.kappa.flag(),
            converged: ctl_state.xi[r] && ctl_state.kappa[r],
        });
        solutions.push(o.published.or(o.agent.last_solution).expect("every region solved"));
    }
    trace.sort_by_key(TraceEvent::time);
    Ok(finish(config, &views, solutions, per_region, converged, stopped_at, max_kkt, trace))
}

type ControllerOutcome = (ControllerState, Vec<TraceEvent>, Nanos, Option<Error>);

fn controller_loop(
    n: usize,
    horizon: usize,
    graph: &BTreeMap<RegionId, Vec<RegionId>>,
    rx: Receiver<(RegionId, ToController)>,
    agents: &[Sender<ToAgent>],
    start: Instant,
) -> ControllerOutcome {
    let mut ctl = ControllerState::new(n, horizon);
    let mut events = Vec::new();
    let mut failure = None;
    let now = || start.elapsed().as_nanos() as Nanos;
    while let Ok((from, msg)) = rx.recv() {
        match msg {
            ToController::Report(report) => {
                events.push(TraceEvent::Delivery {
                    t_ns: now(),
                    kind: MessageKind::Report,
                    from: Endpoint::Region(from),
                    to: Endpoint::Controller,
                });
                let replies = match ctl.on_report(&report, graph) {
                    Ok(r) => r,
                    Err(e) => {
                        failure = Some(e);
                        break;
                    }
                };
                if replies.len() == 2 {
                    events.push(TraceEvent::Match {
                        t_ns: now(),
                        first: replies[0].0,
                        second: replies[1].0,
                    });
                }
                if ctl.check_gc() {
                    events.push(TraceEvent::GlobalConvergence { t_ns: now() });
                    break;
                }
                for (to, reply) in replies {
                    let _ = agents[to].send(ToAgent::Reply(reply));
                }
            }
            ToController::Exhausted => break,
            ToController::Failed(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    let stopped = now();
    for tx in agents {
        let _ = tx.send(ToAgent::Stop);
    }
    (ctl, events, stopped, failure)
}

fn agent_loop(
    mut agent: Agent,
    mut ctx: Ctx,
    rx: Receiver<ToAgent>,
    peers: Vec<Sender<ToAgent>>,
    ctl: Sender<(RegionId, ToController)>,
) -> AgentOutcome {
    let r = agent.region();
    let me = Endpoint::Region(r);
    let mut out = Books::default();
    let mut buffered: Option<DeltaTuple> = None;
    let mut last_mark = ctx.now();

    'run: loop {
        let t0 = ctx.now();
        out.events.push(TraceEvent::Wake { t_ns: t0, region: r, k: agent.k });
        let began = match agent.begin_iteration() {
            Ok(b) => b,
            Err(e) => {
                let _ = ctl.send((r, ToController::Failed(e)));
                break;
            }
        };
        let d = ctx.compute.duration(r, agent.kappa.flag(), began.elapsed);
        // scaled or synthetic compute takes its modelled time
        thread::sleep(Duration::from_nanos(d.saturating_sub(ctx.now() - t0)));
        let solved = ctx.now();
        let mut record = began.record;
        record.solve_ms = ns_to_ms(solved - t0);
        out.max_kkt = out.max_kkt.max(record.kkt_residual);
        out.events.push(TraceEvent::Solve { t_ns: solved, record });
        out.clock.compute += solved - last_mark;
        last_mark = solved;
        out.updates += 1;
        out.published = agent.last_solution.clone();

        let mut latency = ctx.delay(me, Endpoint::Controller);
        let _ = ctl.send((r, ToController::Report(began.report)));

        let reply = loop {
            match rx.recv() {
                Ok(ToAgent::Reply(rep)) => break rep,
                Ok(ToAgent::Delta(d)) => buffered = Some(d),
                Ok(ToAgent::Stop) | Err(_) => break 'run,
            }
        };
        latency += ctx.delay(Endpoint::Controller, me);
        out.events.push(TraceEvent::Delivery {
            t_ns: ctx.now(),
            kind: MessageKind::Reply,
            from: Endpoint::Controller,
            to: me,
        });
        let outgoing = match agent.on_reply(&reply) {
            Ok(o) => o,
            Err(e) => {
                let _ = ctl.send((r, ToController::Failed(e)));
                break;
            }
        };
        if let Some(delta) = outgoing {
            let to = delta.to;
            latency += ctx.delay(me, Endpoint::Region(to));
            let _ = peers[to].send(ToAgent::Delta(delta));
            let incoming = match buffered.take() {
                Some(d) => d,
                None => loop {
                    match rx.recv() {
                        Ok(ToAgent::Delta(d)) => break d,
                        Ok(ToAgent::Reply(_)) => {
                            let _ = ctl.send((r, ToController::Failed(Error::Protocol(format!(
                                "region {r} got a second reply in one iteration"
                            )))));
                            break 'run;
                        }
                        Ok(ToAgent::Stop) | Err(_) => break 'run,
                    }
                },
            };
            out.events.push(TraceEvent::Delivery {
                t_ns: ctx.now(),
                kind: MessageKind::Delta,
                from: Endpoint::Region(incoming.from),
                to: me,
            });
            if let Err(e) = agent.on_delta(&incoming) {
                let _ = ctl.send((r, ToController::Failed(e)));
                break;
            }
        }
        if let Err(e) = agent.complete_iteration() {
            let _ = ctl.send((r, ToController::Failed(e)));
            break;
        }
        let end = ctx.now();
        out.clock.wait(end - solved, latency);
        last_mark = end;
        if agent.k >= ctx.max_iters {
            let _ = ctl.send((r, ToController::Exhausted));
            // wait for the stop so the books close at the same point
            while !matches!(rx.recv(), Ok(ToAgent::Stop) | Err(_)) {}
            break;
        }
    }
    // waiting since the last solve or finished iteration
    out.clock.idle += ctx.now().saturating_sub(last_mark);
    AgentOutcome {
        agent,
        published: out.published,
        clock: out.clock,
        updates: out.updates,
        max_kkt: out.max_kkt,
        events: out.events,
    }
}

#[derive(Default)]
struct Books {
    published: Option<LocalSolution>,
    clock: Clock,
    updates: usize,
    max_kkt: f64,
    events: Vec<TraceEvent>,
}
