//! Lockstep baseline: every round all regions solve, the controller sums
//! exactly, and every region exchanges with every neighbour.

use crate::agent::{Agent, Weighting};
use crate::case::{Partition, PowerCase};
use crate::controller::ControllerState;
use crate::error::Result;
use crate::io::RunConfig;

use super::{
    check_inputs, finish, ns_to_ms, Clock, ComputeClock, Endpoint, Latencies, MessageKind, Nanos, RegionStats,
    RunResult, TraceEvent,
};

/// Synchronous run: uniform production weights, global phase switch only.
pub fn run_sync(case: &PowerCase, partition: &Partition, config: &RunConfig) -> Result<RunResult> {
    let views = check_inputs(case, partition, config)?;
    let n = views.len();
    let mut agents: Vec<Agent> = views
        .iter()
        .map(|v| Agent::new(v.clone(), config, Weighting::Uniform, false))
        .collect();
    let mut ctl = ControllerState::new(n, case.horizon);
    let mut lat = Latencies::new(config.latency_model, n, config.seed);
    let mut compute = ComputeClock::new(config, n);
    let mut clocks = vec![Clock::default(); n];
    let mut trace = Vec::new();
    let mut max_kkt = 0.0_f64;
    let mut now: Nanos = 0;
    let mut converged = false;

    for _round in 0..config.max_iters {
        let mut events = Vec::new();
        let mut durations = Vec::with_capacity(n);
        let mut reports = Vec::with_capacity(n);
        for (r, agent) in agents.iter_mut().enumerate() {
            events.push(TraceEvent::Wake { t_ns: now, region: r, k: agent.k });
            let began = agent.begin_iteration()?;
            let d = compute.duration(r, agent.kappa.flag(), began.elapsed);
            let mut record = began.record;
            record.solve_ms = ns_to_ms(d);
            max_kkt = max_kkt.max(record.kkt_residual);
            events.push(TraceEvent::Solve { t_ns: now + d, record });
            durations.push(d);
            reports.push(began.report);
        }
        let slowest = durations.iter().copied().max().unwrap_or(0);
        for (c, &d) in clocks.iter_mut().zip(&durations) {
            c.compute += d;
            c.idle += slowest - d;
        }
        let barrier = now + slowest;

        let mut report_lat = 0;
        for rep in &reports {
            let l = lat.sample(Endpoint::Region(rep.region), Endpoint::Controller);
            report_lat = report_lat.max(l);
            events.push(delivery(barrier + l, MessageKind::Report, Endpoint::Region(rep.region), Endpoint::Controller));
            ctl.record(rep)?;
        }
        if ctl.check_gc() {
            let end = barrier + report_lat;
            events.push(TraceEvent::GlobalConvergence { t_ns: end });
            for c in clocks.iter_mut() {
                c.comm += report_lat;
            }
            now = end;
            converged = true;
            flush(&mut trace, events);
            break;
        }

        let summed = barrier + report_lat;
        let reply = ctl.broadcast();
        let mut reply_lat = 0;
        for (r, agent) in agents.iter_mut().enumerate() {
            let l = lat.sample(Endpoint::Controller, Endpoint::Region(r));
            reply_lat = reply_lat.max(l);
            events.push(delivery(summed + l, MessageKind::Reply, Endpoint::Controller, Endpoint::Region(r)));
            agent.on_reply(&reply)?;
        }

        // every outgoing exchange is built before any incoming one is applied
        let sent = summed + reply_lat;
        let mut deltas = Vec::new();
        for agent in &agents {
            for &nb in &agent.view.neighbors {
                deltas.push(agent.delta_for(nb));
            }
        }
        let mut delta_lat = 0;
        for d in &deltas {
            let l = lat.sample(Endpoint::Region(d.from), Endpoint::Region(d.to));
            delta_lat = delta_lat.max(l);
            events.push(delivery(sent + l, MessageKind::Delta, Endpoint::Region(d.from), Endpoint::Region(d.to)));
            agents[d.to].on_delta(d)?;
        }
        for agent in agents.iter_mut() {
            agent.complete_iteration()?;
        }
        let comm = report_lat + reply_lat + delta_lat;
        for c in clocks.iter_mut() {
            c.comm += comm;
        }
        now = barrier + comm;
        flush(&mut trace, events);
    }

    let per_region = clocks
        .iter()
        .enumerate()
        .map(|(r, c)| RegionStats {
            region: r,
            updates: agents[r].xi_history.len(),
            compute_ms: ns_to_ms(c.compute),
            comm_ms: ns_to_ms(c.comm),
            idle_ms: ns_to_ms(c.idle),
            binary: agents[r].kappa.flag(),
            converged: ctl.xi[r] && ctl.kappa[r],
        })
        .collect();
    let solutions = agents
        .iter()
        .map(|a| a.last_solution.clone().expect("every region solved"))
        .collect();
    Ok(finish(config, &views, solutions, per_region, converged, now, max_kkt, trace))
}

fn delivery(t: Nanos, kind: MessageKind, from: Endpoint, to: Endpoint) -> TraceEvent {
    TraceEvent::Delivery { t_ns: t, kind, from, to }
}

/// Appends one round's events in time order.
fn flush(trace: &mut Vec<TraceEvent>, mut events: Vec<TraceEvent>) {
    events.sort_by_key(TraceEvent::time);
    trace.extend(events);
}
