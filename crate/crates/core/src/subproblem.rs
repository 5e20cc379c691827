//! Assembly of one region's augmented subproblem and evaluation of its
//! costs.
//!
//! Variables are laid out period-major. Within period `t` the block is
//! `[x(G), y(G), π_U(G), π_D(G), θ(angle buses), f(tie lines), p]`.

use std::collections::BTreeMap;

use ducsim_solver::{
    kkt_residual, solve_miqp_with, solve_qp_bounds, solve_qp_with, MiqpProblem, MiqpSettings, MiqpStatus, QpBuilder, QpProblem,
    QpSettings, QpStatus, SolverError,
};
use serde::{Deserialize, Serialize};

use crate::case::{BusId, LineId, RegionView};
use crate::consensus::ConsensusState;
use crate::error::{Error, Result};
use crate::io::RunConfig;

/// Penalty weights used when assembling the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penalties {
    pub rho_theta: f64,
    pub rho_f: f64,
    pub rho_p: f64,
}

impl From<&RunConfig> for Penalties {
    fn from(c: &RunConfig) -> Self {
        Self {
            rho_theta: c.rho_theta,
            rho_f: c.rho_f,
            rho_p: c.rho_p,
        }
    }
}

/// Index map from model quantities to QP variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub horizon: usize,
    pub n_gen: usize,
    pub angle_buses: Vec<BusId>,
    pub ties: Vec<LineId>,
    bus_pos: BTreeMap<BusId, usize>,
}

impl Layout {
    pub fn new(view: &RegionView) -> Self {
        let angle_buses = view.angle_buses();
        let bus_pos = angle_buses.iter().enumerate().map(|(i, &b)| (b, i)).collect();
        Self {
            horizon: view.horizon,
            n_gen: view.generators.len(),
            angle_buses,
            ties: view.tie_lines.clone(),
            bus_pos,
        }
    }

    fn block(&self) -> usize {
        4 * self.n_gen + self.angle_buses.len() + self.ties.len() + 1
    }

    pub fn num_vars(&self) -> usize {
        self.horizon * self.block()
    }

    pub fn x(&self, g: usize, t: usize) -> usize {
        t * self.block() + g
    }

    pub fn y(&self, g: usize, t: usize) -> usize {
        t * self.block() + self.n_gen + g
    }

    pub fn pi_up(&self, g: usize, t: usize) -> usize {
        t * self.block() + 2 * self.n_gen + g
    }

    pub fn pi_down(&self, g: usize, t: usize) -> usize {
        t * self.block() + 3 * self.n_gen + g
    }

    pub fn theta(&self, bus: BusId, t: usize) -> usize {
        t * self.block() + 4 * self.n_gen + self.bus_pos[&bus]
    }

    /// `k` is the position of the line in `ties`.
    pub fn flow(&self, k: usize, t: usize) -> usize {
        t * self.block() + 4 * self.n_gen + self.angle_buses.len() + k
    }

    pub fn p(&self, t: usize) -> usize {
        (t + 1) * self.block() - 1
    }

    /// All commitment variable indices.
    pub fn binaries(&self) -> Vec<usize> {
        (0..self.horizon)
            .flat_map(|t| (0..self.n_gen).map(move |g| (g, t)))
            .map(|(g, t)| self.x(g, t))
            .collect()
    }
}

/// Closed-form model sizes: `(variables, equality rows, inequality rows)`.
pub fn expected_counts(view: &RegionView) -> (usize, usize, usize) {
    let t = view.horizon;
    let g = view.generators.len();
    let nb = view.internal.len() + view.boundary.len() + view.foreign.len();
    let ties = view.tie_lines.len();
    let owned = view.internal.len() + view.boundary.len();
    (
        t * (4 * g + nb + ties + 1),
        t * (ties + owned + 1),
        g * (8 * t - 2) + 2 * t * view.local_lines.len(),
    )
}

/// An assembled subproblem together with its variable layout.
#[derive(Debug, Clone)]
pub struct Subproblem {
    pub qp: QpProblem,
    pub layout: Layout,
    pub binary: bool,
}

impl Subproblem {
    pub fn as_miqp(&self) -> Result<MiqpProblem> {
        Ok(MiqpProblem::new(self.qp.clone(), self.layout.binaries())?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalSolution {
    /// generator ids, in the order of the `[g]` index below
    pub gen_ids: Vec<usize>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub pi_up: Vec<Vec<f64>>,
    pub pi_down: Vec<Vec<f64>>,
    pub theta: BTreeMap<BusId, Vec<f64>>,
    /// tie-line flow, positive from the line's `from` bus
    pub flow: BTreeMap<LineId, Vec<f64>>,
    pub p: Vec<f64>,
    pub obj_augmented: f64,
    pub obj_true: f64,
    pub kkt_residual: f64,
    pub qp_iterations: usize,
    pub nodes: usize,
    /// branch-and-bound lower bound on the objective (binary solves only)
    pub lower_bound: Option<f64>,
    /// true when branch and bound stopped at the node limit
    pub node_limit_hit: bool,
    pub binary: bool,
    #[serde(skip)]
    pub raw: Vec<f64>,
}

impl LocalSolution {
    /// Regional production per period.
    pub fn total_y(&self) -> Vec<f64> {
        let t_len = self.p.len();
        (0..t_len).map(|t| self.y.iter().map(|yg| yg[t]).sum()).collect()
    }

    /// Commitments rounded to 0/1.
    pub fn commitment_pattern(&self) -> Vec<Vec<u8>> {
        self.x
            .iter()
            .map(|xg| xg.iter().map(|&v| u8::from(v >= 0.5)).collect())
            .collect()
    }
}

fn check_consensus(view: &RegionView, c: &ConsensusState) -> Result<()> {
    if c.horizon != view.horizon {
        return Err(Error::Subproblem(format!(
            "horizon mismatch: consensus has {}, view has {}",
            c.horizon, view.horizon
        )));
    }
    let vectors = c
        .phase
        .iter()
        .flat_map(|ch| [&ch.theta_bar, &ch.lambda])
        .chain(c.flow.iter().flat_map(|ch| [&ch.f_bar, &ch.phi, &ch.f_tilde]))
        .chain([&c.p_bar, &c.eta]);
    if vectors.into_iter().any(|v| v.len() != view.horizon) {
        return Err(Error::Subproblem("horizon mismatch in consensus vectors".into()));
    }
    for &n in &view.neighbors {
        for b in view.shared_buses(n) {
            if c.phase_index(b, n).is_none() {
                return Err(Error::Subproblem(format!("missing consensus entry for bus {b}, region {n}")));
            }
        }
    }
    for &l in &view.tie_lines {
        if c.flow_index(l).is_none() {
            return Err(Error::Subproblem(format!("missing consensus entry for line {l}")));
        }
    }
    Ok(())
}

/// Adds `w/2 (v − c)² + λ (v − c)` to the objective.
fn add_penalty(qb: &mut QpBuilder, v: usize, center: f64, dual: f64, w: f64) {
    qb.add_quadratic(v, v, w);
    qb.add_linear(v, dual - w * center);
    qb.add_offset(0.5 * w * center * center - dual * center);
}

/// Assembles the region model. With `consensus = None` no penalty or dual
/// term is added, which gives the plain UC problem of the view.
pub fn build_model(view: &RegionView, consensus: Option<&ConsensusState>, pen: Penalties, binary: bool) -> Result<Subproblem> {
    if let Some(c) = consensus {
        check_consensus(view, c)?;
    }
    let lay = Layout::new(view);
    let t_len = view.horizon;
    let mut qb = QpBuilder::new();
    for t in 0..t_len {
        // x, y, π_U, π_D; y gets its own bounds below
        for _ in 0..4 * view.generators.len() {
            qb.add_var(0.0, 1.0);
        }
        for &b in &lay.angle_buses {
            if view.reference_bus == Some(b) {
                qb.add_var(0.0, 0.0);
            } else {
                qb.add_var(f64::NEG_INFINITY, f64::INFINITY);
            }
        }
        for &l in &lay.ties {
            let fm = view.line(l).f_max;
            qb.add_var(-fm, fm);
        }
        qb.add_var(f64::NEG_INFINITY, f64::INFINITY);
        for (g, gen) in view.generators.iter().enumerate() {
            qb.set_bounds(lay.y(g, t), 0.0, gen.p_max);
        }
    }
    debug_assert_eq!(qb.num_vars(), lay.num_vars());

    // costs
    for (g, gen) in view.generators.iter().enumerate() {
        for t in 0..t_len {
            qb.add_linear(lay.y(g, t), gen.cost_dispatch);
            qb.add_linear(lay.x(g, t), gen.cost_commit);
            qb.add_linear(lay.pi_up(g, t), gen.cost_startup);
            qb.add_linear(lay.pi_down(g, t), gen.cost_shutdown);
        }
    }

    // equalities: tie flow definition, bus balance, production
    for t in 0..t_len {
        for (k, &l) in lay.ties.iter().enumerate() {
            let line = view.line(l);
            qb.add_eq(
                &[
                    (lay.flow(k, t), 1.0),
                    (lay.theta(line.from_bus, t), -line.susceptance),
                    (lay.theta(line.to_bus, t), line.susceptance),
                ],
                0.0,
            );
        }
        for u in view.owned() {
            let mut terms: Vec<(usize, f64)> = view
                .generators
                .iter()
                .enumerate()
                .filter(|(_, g)| g.bus == u)
                .map(|(g, _)| (lay.y(g, t), 1.0))
                .collect();
            for &l in &view.local_lines {
                let line = view.line(l);
                if line.touches(u) {
                    let v = line.other(u);
                    terms.push((lay.theta(u, t), -line.susceptance));
                    terms.push((lay.theta(v, t), line.susceptance));
                }
            }
            for (k, &l) in lay.ties.iter().enumerate() {
                let line = view.line(l);
                if line.from_bus == u {
                    terms.push((lay.flow(k, t), -1.0));
                } else if line.to_bus == u {
                    terms.push((lay.flow(k, t), 1.0));
                }
            }
            qb.add_eq(&terms, view.demand[&u][t]);
        }
        let mut terms: Vec<(usize, f64)> = (0..lay.n_gen).map(|g| (lay.y(g, t), -1.0)).collect();
        terms.push((lay.p(t), 1.0));
        qb.add_eq(&terms, 0.0);
    }

    // generator inequalities
    for (g, gen) in view.generators.iter().enumerate() {
        for t in 0..t_len {
            let (x, y) = (lay.x(g, t), lay.y(g, t));
            qb.add_le(&[(y, 1.0), (x, -gen.p_max)], 0.0);
            qb.add_le(&[(x, gen.p_min), (y, -1.0)], 0.0);
        }
        for t in 0..t_len {
            let mut up = vec![(lay.x(g, t), 1.0), (lay.pi_up(g, t), -1.0)];
            let mut down = vec![(lay.x(g, t), -1.0), (lay.pi_down(g, t), -1.0)];
            if t > 0 {
                up.push((lay.x(g, t - 1), -1.0));
                down.push((lay.x(g, t - 1), 1.0));
            }
            qb.add_le(&up, 0.0);
            qb.add_le(&down, 0.0);
        }
        for t in 1..t_len {
            let (y1, y0) = (lay.y(g, t), lay.y(g, t - 1));
            qb.add_le(&[(y1, 1.0), (y0, -1.0)], gen.ramp);
            qb.add_le(&[(y0, 1.0), (y1, -1.0)], gen.ramp);
        }
        for t in 0..t_len {
            let lo = (t + 1).saturating_sub(gen.min_up);
            let mut terms: Vec<(usize, f64)> = (lo..=t).map(|i| (lay.pi_up(g, i), 1.0)).collect();
            terms.push((lay.x(g, t), -1.0));
            qb.add_le(&terms, 0.0);
        }
        for t in 0..t_len {
            let lo = (t + 1).saturating_sub(gen.min_down);
            let mut terms: Vec<(usize, f64)> = (lo..=t).map(|i| (lay.pi_down(g, i), 1.0)).collect();
            terms.push((lay.x(g, t), 1.0));
            qb.add_le(&terms, 1.0);
        }
    }

    // internal line limits
    for &l in &view.local_lines {
        let line = view.line(l);
        for t in 0..t_len {
            let (u, v) = (lay.theta(line.from_bus, t), lay.theta(line.to_bus, t));
            let s = line.susceptance;
            qb.add_le(&[(u, s), (v, -s)], line.f_max);
            qb.add_le(&[(u, -s), (v, s)], line.f_max);
        }
    }

    if let Some(c) = consensus {
        for ch in &c.phase {
            for t in 0..t_len {
                add_penalty(&mut qb, lay.theta(ch.bus, t), ch.theta_bar[t], ch.lambda[t], pen.rho_theta);
            }
        }
        for ch in &c.flow {
            let k = lay.ties.iter().position(|&l| l == ch.line).expect("checked above");
            for t in 0..t_len {
                let f = lay.flow(k, t);
                add_penalty(&mut qb, f, ch.f_bar[t], ch.phi[t], pen.rho_f);
                add_penalty(&mut qb, f, ch.f_tilde[t], 0.0, pen.rho_f);
            }
        }
        for t in 0..t_len {
            add_penalty(&mut qb, lay.p(t), c.p_bar[t], c.eta[t], pen.rho_p);
        }
    }

    let qp = qb.build()?;
    Ok(Subproblem { qp, layout: lay, binary })
}

/// Relaxed subproblem: commitments and start/stop indicators in `[0, 1]`.
pub fn build_convex(view: &RegionView, consensus: &ConsensusState, config: &RunConfig) -> Result<Subproblem> {
    build_model(view, Some(consensus), config.into(), false)
}

/// Same model with the commitments restricted to `{0, 1}`.
pub fn build_binary(view: &RegionView, consensus: &ConsensusState, config: &RunConfig) -> Result<Subproblem> {
    build_model(view, Some(consensus), config.into(), true)
}

/// `Σ_t Σ_g d·y + c·x + S_U·π_U + S_D·π_D`.
pub fn true_cost(sol: &LocalSolution, view: &RegionView) -> f64 {
    let mut total = 0.0;
    for (g, gen) in view.generators.iter().enumerate() {
        for t in 0..view.horizon {
            total += gen.cost_dispatch * sol.y[g][t]
                + gen.cost_commit * sol.x[g][t]
                + gen.cost_startup * sol.pi_up[g][t]
                + gen.cost_shutdown * sol.pi_down[g][t];
        }
    }
    total
}

/// Term-by-term evaluation of the augmented objective at `sol`.
pub fn augmented_objective(sol: &LocalSolution, view: &RegionView, c: &ConsensusState, pen: Penalties) -> f64 {
    let mut total = true_cost(sol, view);
    for t in 0..view.horizon {
        for ch in &c.phase {
            let r = sol.theta[&ch.bus][t] - ch.theta_bar[t];
            total += ch.lambda[t] * r + 0.5 * pen.rho_theta * r * r;
        }
        for ch in &c.flow {
            let f = sol.flow[&ch.line][t];
            let r = f - ch.f_bar[t];
            let e = f - ch.f_tilde[t];
            total += ch.phi[t] * r + 0.5 * pen.rho_f * (r * r + e * e);
        }
        let r = sol.p[t] - c.p_bar[t];
        total += c.eta[t] * r + 0.5 * pen.rho_p * r * r;
    }
    total
}

/// Largest absolute power-balance residual over owned buses and periods.
/// Tie-line terms use the solution's flow variables.
pub fn balance_residual(sol: &LocalSolution, view: &RegionView) -> f64 {
    let mut worst: f64 = 0.0;
    for u in view.owned() {
        for t in 0..view.horizon {
            let mut r = -view.demand[&u][t];
            for (g, gen) in view.generators.iter().enumerate() {
                if gen.bus == u {
                    r += sol.y[g][t];
                }
            }
            for &l in &view.local_lines {
                let line = view.line(l);
                if line.touches(u) {
                    let v = line.other(u);
                    r -= line.susceptance * (sol.theta[&u][t] - sol.theta[&v][t]);
                }
            }
            for &l in &view.tie_lines {
                let line = view.line(l);
                if line.from_bus == u {
                    r -= sol.flow[&l][t];
                } else if line.to_bus == u {
                    r += sol.flow[&l][t];
                }
            }
            worst = worst.max(r.abs());
        }
    }
    worst
}

/// Maps a raw QP vector back to model quantities.
pub fn extract(sub: &Subproblem, view: &RegionView, z: &[f64]) -> LocalSolution {
    let lay = &sub.layout;
    let t_len = lay.horizon;
    let per_gen = |f: &dyn Fn(usize, usize) -> usize| -> Vec<Vec<f64>> {
        (0..lay.n_gen).map(|g| (0..t_len).map(|t| z[f(g, t)]).collect()).collect()
    };
    let mut sol = LocalSolution {
        gen_ids: view.generators.iter().map(|g| g.id).collect(),
        x: per_gen(&|g, t| lay.x(g, t)),
        y: per_gen(&|g, t| lay.y(g, t)),
        pi_up: per_gen(&|g, t| lay.pi_up(g, t)),
        pi_down: per_gen(&|g, t| lay.pi_down(g, t)),
        theta: lay
            .angle_buses
            .iter()
            .map(|&b| (b, (0..t_len).map(|t| z[lay.theta(b, t)]).collect()))
            .collect(),
        flow: lay
            .ties
            .iter()
            .enumerate()
            .map(|(k, &l)| (l, (0..t_len).map(|t| z[lay.flow(k, t)]).collect()))
            .collect(),
        p: (0..t_len).map(|t| z[lay.p(t)]).collect(),
        obj_augmented: sub.qp.objective(z),
        obj_true: 0.0,
        kkt_residual: 0.0,
        qp_iterations: 0,
        nodes: 0,
        lower_bound: None,
        node_limit_hit: false,
        binary: sub.binary,
        raw: z.to_vec(),
    };
    sol.obj_true = true_cost(&sol, view);
    sol
}

/// Solver knobs for a local solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub qp_tol: f64,
    pub qp_iter_limit: usize,
    pub mip_gap: f64,
    pub node_limit: usize,
}

impl From<&RunConfig> for SolveOptions {
    fn from(c: &RunConfig) -> Self {
        Self {
            qp_tol: c.qp_tol,
            qp_iter_limit: c.qp_iter_limit,
            mip_gap: c.mip_gap,
            node_limit: c.node_limit,
        }
    }
}

/// Outcome of a local solve that did not produce a usable point.
#[derive(Debug, Clone, PartialEq)]
pub enum SolveFailure {
    Infeasible(f64),
    Solver(String),
}

/// Solves a subproblem. `hint` is a previous raw solution whose
/// commitments seed the branch-and-bound incumbent.
///
/// Binary solves finish with one QP over the continuous variables at the
/// chosen commitments, which supplies the reported KKT residual.
pub fn solve_local(
    sub: &Subproblem,
    view: &RegionView,
    opts: &SolveOptions,
    hint: Option<&[f64]>,
) -> std::result::Result<LocalSolution, SolveFailure> {
    let qp_settings = QpSettings {
        tol: opts.qp_tol,
        iter_limit: opts.qp_iter_limit,
        warm_start: None,
    };
    if !sub.binary {
        let s = solve_qp_with(&sub.qp, &qp_settings);
        if s.status == QpStatus::Infeasible {
            return Err(SolveFailure::Infeasible(s.infeasibility));
        }
        if s.x.iter().any(|v| !v.is_finite()) {
            return Err(SolveFailure::Solver(format!("QP diverged ({:?})", s.status)));
        }
        let mut sol = extract(sub, view, &s.x);
        sol.kkt_residual = s.kkt_residual;
        sol.qp_iterations = s.iterations;
        return Ok(sol);
    }

    let miqp = sub.as_miqp().map_err(|e| SolveFailure::Solver(e.to_string()))?;
    let settings = MiqpSettings {
        mip_gap: opts.mip_gap,
        node_limit: opts.node_limit,
        qp: qp_settings.clone(),
        incumbent_hint: hint.filter(|h| h.len() == sub.qp.n).map(|h| h.to_vec()),
        rounding: true,
    };
    let m = match solve_miqp_with(&miqp, &settings) {
        Ok(m) => m,
        Err(SolverError::Infeasible(v)) => {
            return Err(SolveFailure::Infeasible(v));
        }
        Err(e) => return Err(SolveFailure::Solver(e.to_string())),
    };
    let (mut lo, mut hi) = (sub.qp.lo.clone(), sub.qp.hi.clone());
    for &i in &miqp.binary_vars {
        let v = m.x[i].round();
        lo[i] = v;
        hi[i] = v;
    }
    let s = solve_qp_bounds(&sub.qp, &lo, &hi, &qp_settings);
    let (z, resid, iters) = if s.status == QpStatus::Infeasible || s.x.iter().any(|v| !v.is_finite()) {
        (m.x.clone(), f64::INFINITY, 0)
    } else {
        // residual against the fixed-commitment problem
        let fixed = QpProblem { lo, hi, ..sub.qp.clone() };
        let r = kkt_residual(&fixed, &s.x, &s.duals_eq, &s.duals_ineq, &s.duals_bounds);
        (s.x, r, s.iterations)
    };
    let mut sol = extract(sub, view, &z);
    sol.kkt_residual = resid;
    sol.qp_iterations = iters;
    sol.nodes = m.nodes;
    sol.lower_bound = Some(m.lower_bound);
    sol.node_limit_hit = m.status == MiqpStatus::NodeLimit;
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::classify_region;
    use crate::fixtures;

    fn fixture_a_r0() -> (RegionView, ConsensusState) {
        let (case, part) = fixtures::fixture_a();
        let v = classify_region(&case, &part, 0).unwrap();
        let c = ConsensusState::new(&v);
        (v, c)
    }

    #[test]
    fn counts_fixture_a() {
        let (v, c) = fixture_a_r0();
        let sub = build_convex(&v, &c, &RunConfig::default()).unwrap();
        assert_eq!(sub.qp.n, 16);
        let (n, me, mi) = expected_counts(&v);
        assert_eq!((sub.qp.n, sub.qp.b.len(), sub.qp.h.len()), (n, me, mi));
    }

    #[test]
    fn horizon_mismatch_rejected() {
        let (v, mut c) = fixture_a_r0();
        c.eta.push(0.0);
        assert!(build_convex(&v, &c, &RunConfig::default()).is_err());
        let (v, mut c) = fixture_a_r0();
        c.flow.clear();
        assert!(build_convex(&v, &c, &RunConfig::default()).is_err());
    }

    #[test]
    fn true_cost_examples() {
        let (v, c) = fixture_a_r0();
        let sub = build_convex(&v, &c, &RunConfig::default()).unwrap();
        let zero = vec![0.0; sub.qp.n];
        let mut sol = extract(&sub, &v, &zero);
        assert_eq!(true_cost(&sol, &v), 0.0);
        sol.x[0] = vec![1.0, 1.0];
        sol.y[0] = vec![5.0, 5.0];
        sol.pi_up[0] = vec![1.0, 0.0];
        assert_eq!(true_cost(&sol, &v), 13.0);
        sol.x[0] = vec![1.0, 0.0];
        sol.y[0] = vec![0.0, 0.0];
        sol.pi_up[0] = vec![0.0, 0.0];
        assert_eq!(true_cost(&sol, &v), 1.0);
    }

    #[test]
    fn binary_commits_under_demand() {
        let (v, c) = fixture_a_r0();
        let sub = build_binary(&v, &c, &RunConfig::default()).unwrap();
        let sol = solve_local(&sub, &v, &(&RunConfig::default()).into(), None).unwrap();
        assert_eq!(sol.commitment_pattern(), vec![vec![1, 1]]);
        assert!(sol.kkt_residual <= 1e-6, "{}", sol.kkt_residual);
    }

    #[test]
    fn zero_demand_stays_off() {
        let (mut case, part) = fixtures::fixture_a();
        for d in case.demand.values_mut() {
            d.iter_mut().for_each(|v| *v = 0.0);
        }
        let v = classify_region(&case, &part, 0).unwrap();
        let c = ConsensusState::new(&v);
        let sub = build_binary(&v, &c, &RunConfig::default()).unwrap();
        let sol = solve_local(&sub, &v, &(&RunConfig::default()).into(), None).unwrap();
        assert_eq!(sol.commitment_pattern(), vec![vec![0, 0]]);
        assert!(sol.obj_true.abs() < 1e-6);
    }

    #[test]
    fn fixed_commitment_kept() {
        let (v, c) = fixture_a_r0();
        let mut sub = build_binary(&v, &c, &RunConfig::default()).unwrap();
        let x1 = sub.layout.x(0, 1);
        sub.qp.lo[x1] = 1.0;
        let sol = solve_local(&sub, &v, &(&RunConfig::default()).into(), None).unwrap();
        assert_eq!(sol.x[0][1], 1.0);
    }

    #[test]
    fn infeasible_demand_reported() {
        let (mut case, part) = fixtures::fixture_a();
        case.demand.insert(0, vec![20.0, 20.0]);
        let v = classify_region(&case, &part, 0).unwrap();
        let c = ConsensusState::new(&v);
        let sub = build_convex(&v, &c, &RunConfig::default()).unwrap();
        let r = solve_local(&sub, &v, &(&RunConfig::default()).into(), None);
        assert!(matches!(r, Err(SolveFailure::Infeasible(_))));
    }

    #[test]
    fn qp_objective_matches_term_evaluation() {
        let (case, part) = fixtures::fixture_b();
        let v = classify_region(&case, &part, 1).unwrap();
        let mut c = ConsensusState::new(&v);
        for (i, ch) in c.phase.iter_mut().enumerate() {
            ch.theta_bar = vec![0.01 * i as f64, -0.02, 0.03];
            ch.lambda = vec![0.5, -1.0, 0.25 * i as f64];
        }
        for ch in c.flow.iter_mut() {
            ch.f_bar = vec![1.0, -2.0, 0.5];
            ch.phi = vec![0.3, 0.1, -0.7];
            ch.f_tilde = vec![0.9, -1.5, 0.0];
        }
        c.p_bar = vec![5.0, 6.0, 7.0];
        c.eta = vec![0.1, -0.2, 0.3];
        let cfg = RunConfig::default();
        let sub = build_convex(&v, &c, &cfg).unwrap();
        let z: Vec<f64> = (0..sub.qp.n).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.13).collect();
        let sol = extract(&sub, &v, &z);
        let direct = augmented_objective(&sol, &v, &c, (&cfg).into());
        assert!((sol.obj_augmented - direct).abs() < 1e-9, "{} vs {}", sol.obj_augmented, direct);
    }
}
