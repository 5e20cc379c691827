//! One region's iteration loop: solve, report, take the controller's reply,
//! exchange with the partner, update the consensus state.
//!
//! An iteration is split into the calls a driver makes as messages arrive:
//! [`Agent::begin_iteration`] (convergence test, phase switch, solve and
//! report), [`Agent::on_reply`] (forced phase advance, production target,
//! outgoing exchange), [`Agent::on_delta`] (consensus update from the
//! partner's values) and [`Agent::complete_iteration`].

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::case::{BusId, LineId, RegionId, RegionView};
use crate::consensus::{
    neighbor_flow_estimate, production_stats, production_target, production_target_fixed, update_eta, update_flow,
    update_phase, ConsensusState,
};
use crate::controller::{ControllerReply, RegionReport};
use crate::error::{Error, Result};
use crate::io::RunConfig;
use crate::subproblem::{
    build_binary, build_convex, solve_local, LocalSolution, Penalties, SolveFailure, SolveOptions,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Convex,
    Binary,
}

impl Phase {
    pub fn flag(self) -> bool {
        self == Phase::Binary
    }
}

/// How the production target splits the global imbalance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// `μ = s / Σs`
    Adaptive,
    /// `μ = 1 / |R|`
    Uniform,
}

/// Values one region sends to a partner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaTuple {
    pub from: RegionId,
    pub to: RegionId,
    /// own angles at every bus shared with the partner
    pub thetas: BTreeMap<BusId, Vec<f64>>,
    pub lambdas: BTreeMap<BusId, Vec<f64>>,
    pub phis: BTreeMap<LineId, Vec<f64>>,
}

/// `ξ = 1` iff `‖θ − θ̃‖∞ < α` and `‖θ̃ − θ̃_prev‖∞ < β`; 0 without a
/// previous `θ̃`.
pub fn check_local_convergence(
    theta: &[f64],
    theta_tilde: &[f64],
    theta_tilde_prev: Option<&[f64]>,
    alpha: f64,
    beta: f64,
) -> bool {
    let Some(prev) = theta_tilde_prev else {
        return false;
    };
    let gap = theta.iter().zip(theta_tilde).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    let drift = theta_tilde.iter().zip(prev).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    gap < alpha && drift < beta
}

/// Binary once the last `ζ + 1` flags are all set; never back to convex.
pub fn maybe_switch_phase(xi_history: &[bool], zeta: usize, kappa: Phase) -> Phase {
    if kappa == Phase::Binary {
        return Phase::Binary;
    }
    let need = zeta + 1;
    if xi_history.len() >= need && xi_history[xi_history.len() - need..].iter().all(|&x| x) {
        Phase::Binary
    } else {
        Phase::Convex
    }
}

/// Max-norm residuals of the last convergence test.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `‖θ − θ̃‖∞` over all channels
    pub theta_gap: f64,
    /// `‖θ̃ − θ̃_prev‖∞`
    pub theta_drift: f64,
    /// `‖f − f̃‖∞` over tie lines
    pub flow_gap: f64,
    /// `‖p − p̄‖∞`
    pub production_gap: f64,
}

/// Per-iteration trace record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub region: RegionId,
    pub k: usize,
    pub kappa: bool,
    pub xi: bool,
    pub obj_true: f64,
    pub obj_augmented: f64,
    pub solve_ms: f64,
    pub residuals: Residuals,
    pub kkt_residual: f64,
    pub nodes: usize,
}

/// Result of the solve half of an iteration.
#[derive(Debug, Clone)]
pub struct Began {
    pub report: RegionReport,
    pub record: IterationRecord,
    /// wall time of the local solve
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Idle,
    Reported,
    Exchanging(Option<RegionId>),
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub view: RegionView,
    pub consensus: ConsensusState,
    pub last_solution: Option<LocalSolution>,
    pub k: usize,
    pub xi_history: Vec<bool>,
    pub kappa: Phase,
    pub converged: bool,
    /// commitments of the last two binary solves, newest last
    binary_patterns: Vec<Vec<Vec<u8>>>,
    pub last_residuals: Residuals,
    config: RunConfig,
    weighting: Weighting,
    /// ζ streak switching; off in the synchronous baseline
    streak: bool,
    stage: Stage,
}

impl Agent {
    pub fn new(view: RegionView, config: &RunConfig, weighting: Weighting, streak: bool) -> Self {
        let consensus = ConsensusState::new(&view);
        Self {
            view,
            consensus,
            last_solution: None,
            k: 0,
            xi_history: Vec::new(),
            kappa: Phase::Convex,
            converged: false,
            binary_patterns: Vec::new(),
            last_residuals: Residuals::default(),
            config: config.clone(),
            weighting,
            streak,
            stage: Stage::Idle,
        }
    }

    pub fn region(&self) -> RegionId {
        self.view.region
    }

    fn own_theta(&self, bus: BusId) -> &[f64] {
        &self.last_solution.as_ref().expect("solved").theta[&bus]
    }

    /// Local convergence test on the current iterate.
    fn local_convergence(&mut self) -> bool {
        let Some(sol) = &self.last_solution else {
            return false;
        };
        let mut res = Residuals::default();
        let mut ok = true;
        for ch in &self.consensus.phase {
            let theta = &sol.theta[&ch.bus];
            match (&ch.last_received_theta, &ch.prev_received_theta) {
                (Some(last), Some(prev)) => {
                    ok &= check_local_convergence(theta, last, Some(prev), self.config.alpha, self.config.beta);
                    for t in 0..theta.len() {
                        res.theta_gap = res.theta_gap.max((theta[t] - last[t]).abs());
                        res.theta_drift = res.theta_drift.max((last[t] - prev[t]).abs());
                    }
                }
                _ => ok = false,
            }
        }
        for ch in &self.consensus.flow {
            let f = &sol.flow[&ch.line];
            for t in 0..f.len() {
                res.flow_gap = res.flow_gap.max((f[t] - ch.f_tilde[t]).abs());
            }
        }
        for t in 0..sol.p.len() {
            res.production_gap = res.production_gap.max((sol.p[t] - self.consensus.p_bar[t]).abs());
        }
        self.last_residuals = res;
        if self.kappa == Phase::Binary {
            let n = self.binary_patterns.len();
            ok &= n >= 2 && self.binary_patterns[n - 1] == self.binary_patterns[n - 2];
        }
        ok
    }

    /// Convergence test, phase switch, local solve and report.
    pub fn begin_iteration(&mut self) -> Result<Began> {
        if self.stage != Stage::Idle {
            return Err(Error::Protocol(format!(
                "region {} began iteration {} before finishing the previous one",
                self.region(),
                self.k
            )));
        }
        let mut xi = self.local_convergence();
        self.xi_history.push(xi);
        if self.streak {
            let before = self.kappa;
            self.kappa = maybe_switch_phase(&self.xi_history, self.config.zeta, self.kappa);
            if before != self.kappa {
                // the convex iterate says nothing about binary convergence
                xi = false;
            }
        }

        let sub = match self.kappa {
            Phase::Convex => build_convex(&self.view, &self.consensus, &self.config)?,
            Phase::Binary => build_binary(&self.view, &self.consensus, &self.config)?,
        };
        let opts = SolveOptions::from(&self.config);
        let hint = self.last_solution.as_ref().map(|s| s.raw.clone());
        let started = Instant::now();
        let sol = solve_local(&sub, &self.view, &opts, hint.as_deref()).map_err(|e| match e {
            SolveFailure::Infeasible(_) => Error::RegionInfeasible {
                region: self.region(),
                k: self.k,
            },
            SolveFailure::Solver(s) => Error::Subproblem(s),
        })?;
        let elapsed = started.elapsed();
        if self.kappa == Phase::Binary {
            self.binary_patterns.push(sol.commitment_pattern());
            if self.binary_patterns.len() > 2 {
                self.binary_patterns.remove(0);
            }
        }

        let stats = production_stats(&self.view, &sol.y);
        let report = RegionReport {
            region: self.region(),
            psi: stats.psi,
            s: stats.s,
            xi,
            kappa: self.kappa.flag(),
        };
        let record = IterationRecord {
            region: self.region(),
            k: self.k,
            kappa: self.kappa.flag(),
            xi,
            obj_true: sol.obj_true,
            obj_augmented: sol.obj_augmented,
            solve_ms: elapsed.as_secs_f64() * 1e3,
            residuals: self.last_residuals,
            kkt_residual: sol.kkt_residual,
            nodes: sol.nodes,
        };
        self.last_solution = Some(sol);
        self.stage = Stage::Reported;
        Ok(Began { report, record, elapsed })
    }

    /// Takes the controller's sums: forced phase advance, production target,
    /// and the outgoing exchange for the partner (if any).
    pub fn on_reply(&mut self, reply: &ControllerReply) -> Result<Option<DeltaTuple>> {
        if self.stage != Stage::Reported {
            return Err(Error::Protocol(format!("region {} got an unexpected reply", self.region())));
        }
        if reply.sum_xi == self.view.region_count {
            match self.kappa {
                Phase::Binary => self.converged = true,
                Phase::Convex => self.kappa = Phase::Binary,
            }
        }
        self.consensus.sum_psi = reply.sum_psi.clone();
        self.consensus.sum_s = reply.sum_s.clone();
        let sol = self.last_solution.as_ref().expect("solved before reply");
        let total_y = sol.total_y();
        self.consensus.p_bar = match self.weighting {
            Weighting::Adaptive => {
                let stats = production_stats(&self.view, &sol.y);
                production_target(&total_y, &stats.s, &reply.sum_psi, &reply.sum_s).1
            }
            Weighting::Uniform => {
                production_target_fixed(&total_y, 1.0 / self.view.region_count as f64, &reply.sum_psi)
            }
        };
        self.stage = Stage::Exchanging(reply.partner);
        Ok(reply.partner.map(|p| self.delta_for(p)))
    }

    /// Current angles and duals on the boundary shared with `partner`.
    pub fn delta_for(&self, partner: RegionId) -> DeltaTuple {
        let mut thetas = BTreeMap::new();
        let mut lambdas = BTreeMap::new();
        for ch in self.consensus.channels_with(partner) {
            thetas.insert(ch.bus, self.own_theta(ch.bus).to_vec());
            lambdas.insert(ch.bus, ch.lambda.clone());
        }
        let phis = self
            .consensus
            .flow
            .iter()
            .filter(|ch| ch.neighbor == partner)
            .map(|ch| (ch.line, ch.phi.clone()))
            .collect();
        DeltaTuple {
            from: self.region(),
            to: partner,
            thetas,
            lambdas,
            phis,
        }
    }

    /// Applies the partner's values to the shared channels.
    pub fn on_delta(&mut self, delta: &DeltaTuple) -> Result<()> {
        let me = self.region();
        if delta.to != me {
            return Err(Error::Protocol(format!("region {me} got an exchange addressed to {}", delta.to)));
        }
        let partner = delta.from;
        let sol = self.last_solution.as_ref().expect("solved before exchange");
        let (rho_t, rho_f) = (self.config.rho_theta, self.config.rho_f);
        let t_len = self.view.horizon;
        for ch in self.consensus.phase.iter_mut().filter(|c| c.neighbor == partner) {
            let (Some(theta_in), Some(lambda_in)) = (delta.thetas.get(&ch.bus), delta.lambdas.get(&ch.bus)) else {
                return Err(Error::Protocol(format!(
                    "exchange from region {partner} lacks bus {}",
                    ch.bus
                )));
            };
            let own = &sol.theta[&ch.bus];
            for t in 0..t_len {
                let (l, tb) = update_phase(own[t], -ch.lambda[t], theta_in[t], lambda_in[t], rho_t);
                ch.lambda[t] = l;
                ch.theta_bar[t] = tb;
            }
            ch.prev_received_theta = ch.last_received_theta.take();
            ch.last_received_theta = Some(theta_in.clone());
            ch.last_received_lambda = lambda_in.clone();
        }
        for ch in self.consensus.flow.iter_mut().filter(|c| c.neighbor == partner) {
            let line = self.view.line(ch.line);
            let (Some(th_from), Some(th_to), Some(phi_in)) = (
                delta.thetas.get(&line.from_bus),
                delta.thetas.get(&line.to_bus),
                delta.phis.get(&ch.line),
            ) else {
                return Err(Error::Protocol(format!(
                    "exchange from region {partner} lacks line {}",
                    ch.line
                )));
            };
            let own = &sol.flow[&ch.line];
            for t in 0..t_len {
                let f_tilde = neighbor_flow_estimate(th_from[t], th_to[t], line);
                let (p, fb) = update_flow(own[t], -ch.phi[t], f_tilde, phi_in[t], rho_f);
                ch.phi[t] = p;
                ch.f_bar[t] = fb;
                ch.f_tilde[t] = f_tilde;
            }
            ch.last_received_phi = phi_in.clone();
        }
        Ok(())
    }

    /// η update and iteration counter.
    pub fn complete_iteration(&mut self) -> Result<()> {
        if !matches!(self.stage, Stage::Exchanging(_)) {
            return Err(Error::Protocol(format!(
                "region {} completed iteration {} out of order",
                self.region(),
                self.k
            )));
        }
        let p = &self.last_solution.as_ref().expect("solved").p;
        self.consensus.eta = update_eta(&self.consensus.eta, self.config.rho_p, p, &self.consensus.p_bar);
        self.k += 1;
        self.stage = Stage::Idle;
        Ok(())
    }

    /// Partner of the exchange in progress, if any.
    pub fn exchanging_with(&self) -> Option<RegionId> {
        match self.stage {
            Stage::Exchanging(p) => p,
            _ => None,
        }
    }

    pub fn penalties(&self) -> Penalties {
        (&self.config).into()
    }
}
