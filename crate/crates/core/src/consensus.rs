//! Pairwise exchange updates, production-difference statistics and the
//! production target.

use serde::{Deserialize, Serialize};

use crate::case::{BusId, LineId, RegionId, RegionView, TransmissionLine};

/// Below this a denominator is treated as zero.
const GUARD: f64 = 1e-12;

/// Phase-angle state of one `(bus, neighbour)` channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseChannel {
    pub bus: BusId,
    pub neighbor: RegionId,
    pub theta_bar: Vec<f64>,
    pub lambda: Vec<f64>,
    pub last_received_theta: Option<Vec<f64>>,
    /// the θ̃ received before `last_received_theta`
    pub prev_received_theta: Option<Vec<f64>>,
    pub last_received_lambda: Vec<f64>,
}

/// Flow state of one tie line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowChannel {
    pub line: LineId,
    pub neighbor: RegionId,
    pub f_bar: Vec<f64>,
    pub phi: Vec<f64>,
    pub f_tilde: Vec<f64>,
    pub last_received_phi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusState {
    pub horizon: usize,
    /// sorted by `(bus, neighbor)`
    pub phase: Vec<PhaseChannel>,
    /// sorted by line id
    pub flow: Vec<FlowChannel>,
    pub p_bar: Vec<f64>,
    pub eta: Vec<f64>,
    pub sum_psi: Vec<f64>,
    pub sum_s: Vec<f64>,
}

impl ConsensusState {
    /// All-zero state with one phase channel per shared bus and neighbour,
    /// and one flow channel per tie line.
    pub fn new(view: &RegionView) -> Self {
        let t = view.horizon;
        let z = vec![0.0; t];
        let mut phase = Vec::new();
        for &n in &view.neighbors {
            for b in view.shared_buses(n) {
                phase.push(PhaseChannel {
                    bus: b,
                    neighbor: n,
                    theta_bar: z.clone(),
                    lambda: z.clone(),
                    last_received_theta: None,
                    prev_received_theta: None,
                    last_received_lambda: z.clone(),
                });
            }
        }
        phase.sort_by_key(|c| (c.bus, c.neighbor));
        let mut flow: Vec<FlowChannel> = view
            .neighbors
            .iter()
            .flat_map(|&n| view.ties_with(n).into_iter().map(move |l| (l, n)))
            .map(|(line, neighbor)| FlowChannel {
                line,
                neighbor,
                f_bar: z.clone(),
                phi: z.clone(),
                f_tilde: z.clone(),
                last_received_phi: z.clone(),
            })
            .collect();
        flow.sort_by_key(|c| c.line);
        Self {
            horizon: t,
            phase,
            flow,
            p_bar: z.clone(),
            eta: z.clone(),
            sum_psi: z.clone(),
            sum_s: z,
        }
    }

    pub fn phase_index(&self, bus: BusId, neighbor: RegionId) -> Option<usize> {
        self.phase
            .binary_search_by_key(&(bus, neighbor), |c| (c.bus, c.neighbor))
            .ok()
    }

    pub fn flow_index(&self, line: LineId) -> Option<usize> {
        self.flow.binary_search_by_key(&line, |c| c.line).ok()
    }

    /// Phase channels with `neighbor`.
    pub fn channels_with(&self, neighbor: RegionId) -> impl Iterator<Item = &PhaseChannel> {
        self.phase.iter().filter(move |c| c.neighbor == neighbor)
    }
}

/// Intermediate phase-angle update. Returns `(λ̂, θ̄)` where
/// `λ̂ = −½(λ + λ̃) + ρ/2 (θ − θ̃)` and `θ̄ = (λ̂ + λ)/ρ + θ̃`, with `θ̄` using
/// the pre-update `λ`.
pub fn update_phase(theta: f64, lambda: f64, theta_tilde: f64, lambda_tilde: f64, rho_theta: f64) -> (f64, f64) {
    let lambda_hat = -0.5 * (lambda + lambda_tilde) + 0.5 * rho_theta * (theta - theta_tilde);
    let theta_bar = (lambda_hat + lambda) / rho_theta + theta_tilde;
    (lambda_hat, theta_bar)
}

/// Flow counterpart of [`update_phase`]. Returns `(φ̂, f̄)`.
pub fn update_flow(f: f64, phi: f64, f_tilde: f64, phi_tilde: f64, rho_f: f64) -> (f64, f64) {
    update_phase(f, phi, f_tilde, phi_tilde, rho_f)
}

/// Flow implied by the neighbour's angles at the line's `from` and `to`
/// buses: `Γ (θ̃_from − θ̃_to)`.
pub fn neighbor_flow_estimate(theta_from: f64, theta_to: f64, line: &TransmissionLine) -> f64 {
    line.susceptance * (theta_from - theta_to)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductionStats {
    /// owned demand minus regional production
    pub psi: Vec<f64>,
    /// inverse average production residual cost
    pub s: Vec<f64>,
    pub mu: Option<Vec<f64>>,
}

/// `ψ_t = Σ_owned δ_t − Σ_g y_t`,
/// `s_t = Σ_g (P_max − y_t) / Σ_g d (P_max − y_t)` (0 when the denominator
/// vanishes). `y` is indexed `[generator][t]` in view order.
pub fn production_stats(view: &RegionView, y: &[Vec<f64>]) -> ProductionStats {
    let t_len = view.horizon;
    let mut psi = Vec::with_capacity(t_len);
    let mut s = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let produced: f64 = y.iter().map(|yg| yg[t]).sum();
        psi.push(view.owned_demand(t) - produced);
        let (mut num, mut den) = (0.0, 0.0);
        for (g, yg) in view.generators.iter().zip(y) {
            let head = g.p_max - yg[t];
            num += head;
            den += g.cost_dispatch * head;
        }
        s.push(if den.abs() < GUARD { 0.0 } else { (num / den).max(0.0) });
    }
    ProductionStats { psi, s, mu: None }
}

/// `μ_t = s_t / Σs_t` (0 when the sum vanishes) and
/// `p̄_t = Σ_g y_t + μ_t Σψ_t`. `total_y[t]` is the regional production.
pub fn production_target(total_y: &[f64], s_local: &[f64], sum_psi: &[f64], sum_s: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mu: Vec<f64> = s_local
        .iter()
        .zip(sum_s)
        .map(|(s, tot)| if *tot < GUARD { 0.0 } else { s / tot })
        .collect();
    let p_bar = total_y
        .iter()
        .zip(&mu)
        .zip(sum_psi)
        .map(|((y, m), p)| y + m * p)
        .collect();
    (mu, p_bar)
}

/// Production target with a fixed weight, as in the synchronous baseline.
pub fn production_target_fixed(total_y: &[f64], mu: f64, sum_psi: &[f64]) -> Vec<f64> {
    total_y.iter().zip(sum_psi).map(|(y, p)| y + mu * p).collect()
}

/// `η + ρ_p (p − p̄)` per period.
pub fn update_eta(eta: &[f64], rho_p: f64, p: &[f64], p_bar: &[f64]) -> Vec<f64> {
    eta.iter()
        .zip(p)
        .zip(p_bar)
        .map(|((e, p), pb)| e + rho_p * (p - pb))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::classify_region;
    use crate::fixtures;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn phase_examples() {
        assert_eq!(update_phase(1.0, 0.0, 1.0, 0.0, 2.0), (0.0, 1.0));
        let (l, t) = update_phase(1.0, 1.0, 0.0, 0.0, 2.0);
        assert!(close(l, 0.5) && close(t, 0.75));
        let (l, t) = update_phase(0.0, 2.0, 0.0, 2.0, 4.0);
        assert!(close(l, -2.0) && close(t, 0.0));
    }

    #[test]
    fn flow_examples() {
        assert_eq!(update_flow(1.5, 0.0, 1.5, 0.0, 2.0), (0.0, 1.5));
        let (p, f) = update_flow(3.0, 0.0, 1.0, 0.0, 2.0);
        assert!(close(p, 2.0) && close(f, 2.0));
        let (p, f) = update_flow(0.0, 1.0, 0.0, -1.0, 2.0);
        assert!(close(p, 0.0) && close(f, 0.5));
    }

    #[test]
    fn flow_estimate_examples() {
        let line = TransmissionLine {
            from_bus: 0,
            to_bus: 1,
            susceptance: 10.0,
            f_max: 5.0,
        };
        assert!(close(neighbor_flow_estimate(0.3, 0.0, &line), 3.0));
        assert_eq!(neighbor_flow_estimate(0.2, 0.2, &line), 0.0);
        assert!(close(neighbor_flow_estimate(0.0, 0.3, &line), -3.0));
    }

    #[test]
    fn stats_examples() {
        let (case, part) = fixtures::fixture_a();
        let v = classify_region(&case, &part, 0).unwrap();
        let st = production_stats(&v, &[vec![8.0, 10.0]]);
        assert_eq!(st.psi, vec![-6.0, -8.0]);
        assert!(close(st.s[0], 1.0));
        // all at max: guarded
        assert_eq!(st.s[1], 0.0);
        let st = production_stats(&v, &[vec![2.0, 2.0]]);
        assert_eq!(st.psi, vec![0.0, 0.0]);
    }

    #[test]
    fn target_examples() {
        let (mu, pb) = production_target(&[8.0], &[0.5], &[4.0], &[2.0]);
        assert!(close(mu[0], 0.25) && close(pb[0], 9.0));
        let (_, pb) = production_target(&[8.0], &[0.5], &[0.0], &[2.0]);
        assert_eq!(pb, vec![8.0]);
    }

    #[test]
    fn eta_examples() {
        assert_eq!(update_eta(&[1.0], 2.0, &[8.0], &[8.0]), vec![1.0]);
        assert_eq!(update_eta(&[0.0], 2.0, &[9.0], &[8.0]), vec![2.0]);
        let mut e = vec![0.0];
        for _ in 0..3 {
            e = update_eta(&e, 1.0, &[1.0], &[0.0]);
        }
        assert_eq!(e, vec![3.0]);
    }

    #[test]
    fn channels_for_fixture_b() {
        let (case, part) = fixtures::fixture_b();
        let v = classify_region(&case, &part, 0).unwrap();
        let c = ConsensusState::new(&v);
        let keys: Vec<_> = c.phase.iter().map(|p| (p.bus, p.neighbor)).collect();
        assert_eq!(keys, vec![(0, 1), (1, 1), (2, 1), (3, 1)]);
        let lines: Vec<_> = c.flow.iter().map(|f| f.line).collect();
        assert_eq!(lines, vec![1, 3]);
    }
}
