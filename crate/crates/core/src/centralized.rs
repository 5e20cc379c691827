//! Whole-network UC solve used as benchmark and oracle.

use ducsim_solver::relative_gap;
use serde::{Deserialize, Serialize};

use crate::case::{classify_region, validate_case, Partition, PowerCase};
use crate::error::{Error, Result};
use crate::io::RunConfig;
use crate::subproblem::{build_model, solve_local, LocalSolution, Penalties, SolveFailure, SolveOptions};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CentralResult {
    pub solution: LocalSolution,
    /// true UC cost of the incumbent (γ_c)
    pub gamma: f64,
    /// branch-and-bound lower bound (⌊γ_c⌋)
    pub lower_bound: f64,
    pub gap: f64,
    pub nodes: usize,
    pub node_limit_hit: bool,
}

/// Solves the full problem with branch and bound over every commitment.
pub fn solve_centralized(case: &PowerCase, config: &RunConfig) -> Result<CentralResult> {
    let violations = validate_case(case);
    if !violations.is_empty() {
        return Err(Error::InvalidCase(violations));
    }
    for t in 0..case.horizon {
        let (d, cap) = (case.total_demand(t), case.total_capacity());
        if d > cap + 1e-9 {
            return Err(Error::CaseInfeasible(format!(
                "demand {d} exceeds capacity {cap} in period {t}"
            )));
        }
    }
    let part = Partition::single(case);
    let view = classify_region(case, &part, 0)?;
    let sub = build_model(&view, None, Penalties::from(config), true)?;
    let opts = SolveOptions::from(config);
    let solution = match solve_local(&sub, &view, &opts, None) {
        Ok(s) => s,
        Err(SolveFailure::Infeasible(v)) => {
            return Err(Error::CaseInfeasible(format!("no feasible commitment (violation {v:.3e})")))
        }
        Err(SolveFailure::Solver(s)) => return Err(Error::Subproblem(s)),
    };
    let gamma = solution.obj_true;
    let lower_bound = solution.lower_bound.unwrap_or(gamma).min(gamma);
    Ok(CentralResult {
        gap: relative_gap(gamma, lower_bound),
        nodes: solution.nodes,
        node_limit_hit: solution.node_limit_hit,
        solution,
        gamma,
        lower_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn fixture_a_costs_13() {
        let (case, _) = fixtures::fixture_a();
        let r = solve_centralized(&case, &RunConfig::default()).unwrap();
        assert!((r.gamma - 13.0).abs() < 1e-4, "{}", r.gamma);
        assert!(r.lower_bound <= r.gamma + 1e-9);
        assert_eq!(r.solution.commitment_pattern()[0], vec![1, 1]);
    }

    #[test]
    fn capacity_shortfall_is_infeasible() {
        let (mut case, _) = fixtures::fixture_a();
        case.demand.insert(0, vec![30.0, 2.0]);
        assert!(matches!(
            solve_centralized(&case, &RunConfig::default()),
            Err(Error::CaseInfeasible(_))
        ));
    }
}
