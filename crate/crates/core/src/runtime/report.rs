//! Run summaries on disk and the CSV report built from them.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{Backend, Mode, RunConfig};

use super::{compute_metrics, Metrics, RegionStats, RunResult};

/// What `summary.json` holds for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub backend: Backend,
    pub seed: u64,
    pub zeta: usize,
    pub regions: usize,
    /// label of the case file, used to pair runs with a centralized bound
    pub case: String,
    pub converged: bool,
    pub gamma: f64,
    /// branch-and-bound bound, set on centralized runs
    pub lower_bound: Option<f64>,
    pub iterations_to_gc: Option<usize>,
    pub max_kkt_residual: f64,
    pub metrics: Metrics,
    pub per_region: Vec<RegionStats>,
    pub config: BTreeMap<String, String>,
}

impl RunSummary {
    /// `central` is `(γ_c, ⌊γ_c⌋)` if known.
    pub fn new(result: &RunResult, config: &RunConfig, case: &str, central: Option<(f64, f64)>) -> Self {
        let central = central.or(result.lower_bound.map(|lb| (result.final_objective, lb)));
        Self {
            mode: result.mode,
            backend: result.backend,
            seed: result.seed,
            zeta: result.zeta,
            regions: result.regions,
            case: case.to_string(),
            converged: result.converged,
            gamma: result.final_objective,
            lower_bound: result.lower_bound,
            iterations_to_gc: result.iterations_to_gc,
            max_kkt_residual: result.max_kkt_residual,
            metrics: compute_metrics(result, central),
            per_region: result.per_region.clone(),
            config: RunConfig::KEYS
                .iter()
                .map(|k| (k.to_string(), config.get(k).unwrap_or_default()))
                .collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("summary serializes") + "\n";
        std::fs::write(path, text).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}

/// One CSV line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub mode: Mode,
    pub seed: u64,
    pub zeta: usize,
    pub regions: usize,
    pub gamma: f64,
    pub gap_percent: Option<f64>,
    pub async_degree: f64,
    pub sim_total_ms: f64,
    pub compute_ms: f64,
    pub comm_ms: f64,
    pub idle_ms: f64,
    pub iterations_to_gc: Option<usize>,
}

impl ReportRow {
    /// `bound` overrides the gap with `⌊γ_c⌋` from another run.
    pub fn new(s: &RunSummary, bound: Option<f64>) -> Self {
        let gap = match bound {
            Some(lb) => Some((s.gamma - lb) * 100.0 / lb),
            None => s.metrics.gap_percent,
        };
        Self {
            mode: s.mode,
            seed: s.seed,
            zeta: s.zeta,
            regions: s.regions,
            gamma: s.gamma,
            gap_percent: gap,
            async_degree: s.metrics.async_degree,
            sim_total_ms: s.metrics.sim_total_ms,
            compute_ms: s.metrics.compute_ms,
            comm_ms: s.metrics.comm_ms,
            idle_ms: s.metrics.idle_ms,
            iterations_to_gc: s.iterations_to_gc,
        }
    }
}

/// Rows for a set of summaries. Decentralized runs take their gap from a
/// centralized summary of the same case when one is present.
pub fn report_rows(summaries: &[RunSummary]) -> Vec<ReportRow> {
    let bounds: BTreeMap<&str, f64> = summaries
        .iter()
        .filter_map(|s| Some((s.case.as_str(), s.lower_bound?)))
        .collect();
    summaries
        .iter()
        .map(|s| ReportRow::new(s, bounds.get(s.case.as_str()).copied()))
        .collect()
}

pub fn write_report<W: Write>(rows: &[ReportRow], out: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
