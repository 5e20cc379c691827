use std::fmt;

use ducsim_solver::SolverError;
use thiserror::Error;

/// One broken case invariant, e.g. `g0: p_min>p_max`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub entity: String,
    pub rule: String,
}

impl Violation {
    pub fn new(entity: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            entity: entity.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.rule)
    }
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("invalid case: {}", join(.0))]
    InvalidCase(Vec<Violation>),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("unknown region {0}")]
    UnknownRegion(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("subproblem: {0}")]
    Subproblem(String),
    #[error("region {region} subproblem infeasible at iteration {k}")]
    RegionInfeasible { region: usize, k: usize },
    #[error("case is infeasible: {0}")]
    CaseInfeasible(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

pub type Result<T> = std::result::Result<T, Error>;
