//! Global schedule assembly and run metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::case::{BusId, GenId, LineId, RegionView};
use crate::subproblem::LocalSolution;

use super::RunResult;

/// Network-wide commitment and dispatch assembled from regional solutions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub horizon: usize,
    pub commitment: BTreeMap<GenId, Vec<f64>>,
    pub dispatch: BTreeMap<GenId, Vec<f64>>,
    /// angles of owned buses, from their owner
    pub theta: BTreeMap<BusId, Vec<f64>>,
    /// local lines from the owner's angles; tie lines averaged over both ends
    pub flows: BTreeMap<LineId, Vec<f64>>,
    /// per tie line, `max_t |f_a − f_b|` between the two endpoint regions
    pub flow_mismatch: BTreeMap<LineId, f64>,
}

impl Schedule {
    pub fn max_flow_mismatch(&self) -> f64 {
        self.flow_mismatch.values().fold(0.0, |m, &v| m.max(v))
    }
}

/// Merges one solution per view (same order).
pub fn merge_solution(views: &[RegionView], solutions: &[LocalSolution]) -> Schedule {
    let mut s = Schedule {
        horizon: views.first().map_or(0, |v| v.horizon),
        ..Schedule::default()
    };
    let mut tie_values: BTreeMap<LineId, Vec<&Vec<f64>>> = BTreeMap::new();
    for (view, sol) in views.iter().zip(solutions) {
        for (i, &g) in sol.gen_ids.iter().enumerate() {
            s.commitment.insert(g, sol.x[i].clone());
            s.dispatch.insert(g, sol.y[i].clone());
        }
        for b in view.owned() {
            if let Some(th) = sol.theta.get(&b) {
                s.theta.insert(b, th.clone());
            }
        }
        for &l in &view.local_lines {
            let line = view.line(l);
            let (a, b) = (&sol.theta[&line.from_bus], &sol.theta[&line.to_bus]);
            let f = a.iter().zip(b).map(|(x, y)| line.susceptance * (x - y)).collect();
            s.flows.insert(l, f);
        }
        for (&l, f) in &sol.flow {
            tie_values.entry(l).or_default().push(f);
        }
    }
    for (l, vals) in tie_values {
        let t_len = vals[0].len();
        let avg = (0..t_len)
            .map(|t| vals.iter().map(|v| v[t]).sum::<f64>() / vals.len() as f64)
            .collect();
        let mismatch = if vals.len() == 2 {
            (0..t_len).fold(0.0_f64, |m, t| m.max((vals[0][t] - vals[1][t]).abs()))
        } else {
            0.0
        };
        s.flows.insert(l, avg);
        s.flow_mismatch.insert(l, mismatch);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub async_degree: f64,
    /// `(γ − ⌊γ_c⌋)·100/⌊γ_c⌋` when a centralized bound is supplied
    pub gap_percent: Option<f64>,
    pub sim_total_ms: f64,
    pub compute_ms: f64,
    pub comm_ms: f64,
    pub idle_ms: f64,
    /// percentages of the summed region time
    pub compute_share: f64,
    pub comm_share: f64,
    pub idle_share: f64,
    pub max_flow_mismatch: f64,
}

/// `central` is `(γ_c, ⌊γ_c⌋)`.
pub fn compute_metrics(result: &RunResult, central: Option<(f64, f64)>) -> Metrics {
    let updates: Vec<usize> = result.per_region.iter().map(|s| s.updates).collect();
    let max = updates.iter().copied().max().unwrap_or(0);
    let min = updates.iter().copied().min().unwrap_or(0);
    let async_degree = if max == 0 { 0.0 } else { min as f64 / max as f64 };
    let sum = |f: fn(&super::RegionStats) -> f64| result.per_region.iter().map(f).sum::<f64>();
    let (compute, comm, idle) = (sum(|s| s.compute_ms), sum(|s| s.comm_ms), sum(|s| s.idle_ms));
    let total = compute + comm + idle;
    let share = |x: f64| if total > 0.0 { x * 100.0 / total } else { 0.0 };
    Metrics {
        async_degree,
        gap_percent: central.map(|(_, lb)| (result.final_objective - lb) * 100.0 / lb),
        sim_total_ms: result.wall_clock_sim_ms,
        compute_ms: compute,
        comm_ms: comm,
        idle_ms: idle,
        compute_share: share(compute),
        comm_share: share(comm),
        idle_share: share(idle),
        max_flow_mismatch: result.solution.max_flow_mismatch(),
    }
}
