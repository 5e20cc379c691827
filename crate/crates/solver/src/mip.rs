//! Best-first branch and bound over binary variables.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::SolverError;
use crate::qp::{solve_qp_bounds, QpProblem, QpSettings, QpSolution, QpStatus};

/// Binary entries are considered integral within this distance.
pub const INTEGRALITY_TOL: f64 = 1e-6;

/// Absolute floor on the pruning gap, so that relaxations equal to the
/// incumbent up to solver noise do not keep the tree open.
const ABS_GAP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiqpProblem {
    pub base: QpProblem,
    pub binary_vars: Vec<usize>,
}

impl MiqpProblem {
    pub fn new(base: QpProblem, mut binary_vars: Vec<usize>) -> Result<Self, SolverError> {
        binary_vars.sort_unstable();
        binary_vars.dedup();
        for &v in &binary_vars {
            if v >= base.n || base.lo[v] < 0.0 || base.hi[v] > 1.0 {
                return Err(SolverError::BinaryIndex(v));
            }
        }
        Ok(Self { base, binary_vars })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiqpStatus {
    Optimal,
    NodeLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeOutcome {
    Branched,
    Integral,
    Infeasible,
    Pruned,
    Open,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    /// `(variable, value)` fixed when this node was created
    pub fixing: Option<(usize, u8)>,
    pub bound: f64,
    pub outcome: NodeOutcome,
    /// global lower bound after this record
    pub lower_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiqpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub lower_bound: f64,
    pub gap: f64,
    pub status: MiqpStatus,
    /// nodes whose relaxation was solved, root included
    pub nodes: usize,
    pub branchings: usize,
    pub trace: Vec<NodeRecord>,
}

#[derive(Debug, Clone)]
pub struct MiqpSettings {
    pub mip_gap: f64,
    pub node_limit: usize,
    pub qp: QpSettings,
    /// Candidate assignment whose binaries are tried as a starting incumbent.
    pub incumbent_hint: Option<Vec<f64>>,
    /// Try nearest and ceiling rounding of the root relaxation.
    pub rounding: bool,
}

impl Default for MiqpSettings {
    fn default() -> Self {
        Self {
            mip_gap: 1e-3,
            node_limit: 100_000,
            qp: QpSettings::default(),
            incumbent_hint: None,
            rounding: true,
        }
    }
}

pub fn solve_miqp(p: &MiqpProblem, mip_gap: f64, node_limit: usize) -> Result<MiqpSolution, SolverError> {
    solve_miqp_with(
        p,
        &MiqpSettings {
            mip_gap,
            node_limit,
            ..Default::default()
        },
    )
}

/// Relative gap as reported: `(objective − lower_bound) / max(|lower_bound|, 1)`.
pub fn relative_gap(objective: f64, lower_bound: f64) -> f64 {
    ((objective - lower_bound) / lower_bound.abs().max(1.0)).max(0.0)
}

struct Node {
    id: usize,
    parent: Option<usize>,
    depth: usize,
    bound: f64,
    fixings: Vec<(usize, u8)>,
    x: Vec<f64>,
}

// min-heap on (bound, id)
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.id.cmp(&self.id))
    }
}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}

struct Search<'a> {
    p: &'a MiqpProblem,
    s: &'a MiqpSettings,
    incumbent: Option<(f64, Vec<f64>)>,
    solves: usize,
}

impl Search<'_> {
    fn bounds(&self, fixings: &[(usize, u8)]) -> (Vec<f64>, Vec<f64>) {
        let mut lo = self.p.base.lo.clone();
        let mut hi = self.p.base.hi.clone();
        for &(v, val) in fixings {
            lo[v] = val as f64;
            hi[v] = val as f64;
        }
        (lo, hi)
    }

    fn relax(&mut self, fixings: &[(usize, u8)]) -> QpSolution {
        let (lo, hi) = self.bounds(fixings);
        self.solves += 1;
        solve_qp_bounds(&self.p.base, &lo, &hi, &self.s.qp)
    }

    fn most_fractional(&self, x: &[f64]) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for &v in &self.p.binary_vars {
            let f = (x[v] - x[v].floor()).min(x[v].ceil() - x[v]);
            if f > INTEGRALITY_TOL && best.is_none_or(|(bf, _)| f > bf) {
                best = Some((f, v));
            }
        }
        best.map(|(_, v)| v)
    }

    /// Solves with every binary fixed to `values` and offers the result as
    /// an incumbent if it is strictly better.
    fn try_assignment(&mut self, values: &[u8]) {
        let fixings: Vec<(usize, u8)> = self.p.binary_vars.iter().copied().zip(values.iter().copied()).collect();
        for &(v, val) in &fixings {
            let val = val as f64;
            if val < self.p.base.lo[v] || val > self.p.base.hi[v] {
                return;
            }
        }
        let sol = self.relax(&fixings);
        if sol.status != QpStatus::Optimal {
            return;
        }
        let better = match &self.incumbent {
            None => true,
            Some((obj, _)) => sol.objective < obj - 1e-9,
        };
        if better {
            self.incumbent = Some((sol.objective, sol.x));
        }
    }

    fn round_with(&self, x: &[f64], f: impl Fn(f64) -> u8) -> Vec<u8> {
        self.p.binary_vars.iter().map(|&v| f(x[v])).collect()
    }

    fn prunable(&self, bound: f64) -> bool {
        match &self.incumbent {
            Some((obj, _)) => obj - bound <= (self.s.mip_gap * bound.abs()).max(ABS_GAP),
            None => false,
        }
    }
}

pub fn solve_miqp_with(p: &MiqpProblem, settings: &MiqpSettings) -> Result<MiqpSolution, SolverError> {
    let mut search = Search {
        p,
        s: settings,
        incumbent: None,
        solves: 0,
    };
    let mut trace = Vec::new();
    let mut next_id = 0;

    let root = search.relax(&[]);
    if root.status == QpStatus::Infeasible {
        return Err(SolverError::Infeasible(root.infeasibility));
    }
    let root_bound = root.objective;

    if let Some(hint) = &settings.incumbent_hint {
        if hint.len() == p.base.n {
            let vals = search.round_with(hint, |v| (v > 0.5) as u8);
            search.try_assignment(&vals);
        }
    }

    let mut heap = BinaryHeap::new();
    let root_node = Node {
        id: next_id,
        parent: None,
        depth: 0,
        bound: root_bound,
        fixings: Vec::new(),
        x: root.x,
    };
    next_id += 1;

    if search.most_fractional(&root_node.x).is_none() {
        let vals = search.round_with(&root_node.x, |v| (v > 0.5) as u8);
        search.try_assignment(&vals);
        trace.push(NodeRecord {
            id: 0,
            parent: None,
            depth: 0,
            fixing: None,
            bound: root_bound,
            outcome: NodeOutcome::Integral,
            lower_bound: root_bound,
        });
    } else {
        if settings.rounding {
            let nearest = search.round_with(&root_node.x, |v| (v > 0.5) as u8);
            search.try_assignment(&nearest);
            let ceil = search.round_with(&root_node.x, |v| (v > INTEGRALITY_TOL) as u8);
            if ceil != nearest {
                search.try_assignment(&ceil);
            }
        }
        heap.push(root_node);
    }

    let mut pruned_min = f64::INFINITY;
    let mut processed = 0;
    let mut branchings = 0;
    let mut status = MiqpStatus::Optimal;
    let mut last_lb = f64::NEG_INFINITY;

    let global_lb = |heap: &BinaryHeap<Node>, pruned_min: f64, inc: &Option<(f64, Vec<f64>)>| {
        let open = heap.peek().map_or(f64::INFINITY, |n| n.bound);
        let inc = inc.as_ref().map_or(f64::INFINITY, |(o, _)| *o);
        open.min(pruned_min).min(inc)
    };

    while let Some(node) = heap.pop() {
        if search.prunable(node.bound) {
            // best-first: everything still open is prunable too
            pruned_min = pruned_min.min(node.bound);
            for n in heap.drain() {
                pruned_min = pruned_min.min(n.bound);
            }
            break;
        }
        if processed >= settings.node_limit {
            heap.push(node);
            status = MiqpStatus::NodeLimit;
            break;
        }
        processed += 1;
        let var = search
            .most_fractional(&node.x)
            .expect("open nodes are fractional");
        branchings += 1;
        last_lb = last_lb.max(node.bound.min(global_lb(&heap, pruned_min, &search.incumbent)));
        trace.push(NodeRecord {
            id: node.id,
            parent: node.parent,
            depth: node.depth,
            fixing: node.fixings.last().copied(),
            bound: node.bound,
            outcome: NodeOutcome::Branched,
            lower_bound: last_lb,
        });

        for val in [0u8, 1u8] {
            let mut fixings = node.fixings.clone();
            fixings.push((var, val));
            let id = next_id;
            next_id += 1;
            let sol = search.relax(&fixings);
            let mut rec = NodeRecord {
                id,
                parent: Some(node.id),
                depth: node.depth + 1,
                fixing: Some((var, val)),
                bound: node.bound,
                outcome: NodeOutcome::Infeasible,
                lower_bound: 0.0,
            };
            if sol.status != QpStatus::Infeasible {
                let bound = sol.objective.max(node.bound);
                rec.bound = bound;
                if search.most_fractional(&sol.x).is_none() {
                    let vals = search.round_with(&sol.x, |v| (v > 0.5) as u8);
                    search.try_assignment(&vals);
                    rec.outcome = NodeOutcome::Integral;
                } else if search.prunable(bound) {
                    pruned_min = pruned_min.min(bound);
                    rec.outcome = NodeOutcome::Pruned;
                } else {
                    rec.outcome = NodeOutcome::Open;
                    heap.push(Node {
                        id,
                        parent: Some(node.id),
                        depth: node.depth + 1,
                        bound,
                        fixings,
                        x: sol.x,
                    });
                }
            }
            trace.push(rec);
        }
        let lb = global_lb(&heap, pruned_min, &search.incumbent);
        last_lb = last_lb.max(lb);
        for r in trace.iter_mut().rev().take(2) {
            r.lower_bound = last_lb;
        }
    }

    let Some((objective, mut x)) = search.incumbent.take() else {
        return match status {
            MiqpStatus::NodeLimit => Err(SolverError::NodeLimitNoIncumbent),
            MiqpStatus::Optimal => Err(SolverError::Infeasible(f64::INFINITY)),
        };
    };
    for &v in &p.binary_vars {
        x[v] = x[v].round();
    }
    // solver noise can put the incumbent a hair under a node bound
    let lower_bound = global_lb(&heap, pruned_min, &Some((objective, Vec::new())))
        .max(last_lb)
        .min(objective);
    Ok(MiqpSolution {
        gap: relative_gap(objective, lower_bound),
        x,
        objective,
        lower_bound,
        status,
        nodes: search.solves,
        branchings,
        trace,
    })
}
