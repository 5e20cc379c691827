//! Pairing of ready regions, running global sums and convergence flags.
//!
//! The controller never sees network data: its state and messages carry
//! only production differences, residual-cost weights and flags.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::case::RegionId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub region: RegionId,
    pub psi: Vec<f64>,
    pub s: Vec<f64>,
    pub xi: bool,
    pub kappa: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerReply {
    pub sum_psi: Vec<f64>,
    pub sum_s: Vec<f64>,
    pub sum_xi: usize,
    /// `None` only for a region without neighbours
    pub partner: Option<RegionId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub horizon: usize,
    pub psi_tilde: Vec<Vec<f64>>,
    pub s_tilde: Vec<Vec<f64>>,
    pub xi: Vec<bool>,
    pub kappa: Vec<bool>,
    /// regions awaiting a partner, oldest first
    pub pending: VecDeque<RegionId>,
    pub gc: bool,
}

impl ControllerState {
    pub fn new(regions: usize, horizon: usize) -> Self {
        Self {
            horizon,
            psi_tilde: vec![vec![0.0; horizon]; regions],
            s_tilde: vec![vec![0.0; horizon]; regions],
            xi: vec![false; regions],
            kappa: vec![false; regions],
            pending: VecDeque::new(),
            gc: false,
        }
    }

    pub fn region_count(&self) -> usize {
        self.xi.len()
    }

    fn sums(&self) -> (Vec<f64>, Vec<f64>, usize) {
        let mut sp = vec![0.0; self.horizon];
        let mut ss = vec![0.0; self.horizon];
        for (p, s) in self.psi_tilde.iter().zip(&self.s_tilde) {
            for t in 0..self.horizon {
                sp[t] += p[t];
                ss[t] += s[t];
            }
        }
        (sp, ss, self.xi.iter().filter(|&&x| x).count())
    }

    fn reply(&self, partner: Option<RegionId>) -> ControllerReply {
        let (sum_psi, sum_s, sum_xi) = self.sums();
        ControllerReply {
            sum_psi,
            sum_s,
            sum_xi,
            partner,
        }
    }

    /// Records `report` without matching. Used by the synchronous driver,
    /// which pairs everyone each round.
    pub fn record(&mut self, report: &RegionReport) -> Result<()> {
        let r = report.region;
        if r >= self.region_count() {
            return Err(Error::UnknownRegion(r));
        }
        if report.psi.len() != self.horizon || report.s.len() != self.horizon {
            return Err(Error::Protocol(format!("report from region {r} has the wrong horizon")));
        }
        self.psi_tilde[r] = report.psi.clone();
        self.s_tilde[r] = report.s.clone();
        self.xi[r] = report.xi;
        self.kappa[r] = report.kappa;
        Ok(())
    }

    /// Reply carrying the current sums, without a partner.
    pub fn broadcast(&self) -> ControllerReply {
        self.reply(None)
    }

    /// Handles one report. Returns the replies to send: none when the region
    /// is parked, two when it is matched with the longest-waiting pending
    /// neighbour, and one when it has no neighbours at all.
    pub fn on_report(
        &mut self,
        report: &RegionReport,
        neighbors: &BTreeMap<RegionId, Vec<RegionId>>,
    ) -> Result<Vec<(RegionId, ControllerReply)>> {
        let r1 = report.region;
        if self.pending.contains(&r1) {
            return Err(Error::Protocol(format!("region {r1} reported while pending")));
        }
        self.record(report)?;
        let nbrs = neighbors.get(&r1).map(Vec::as_slice).unwrap_or(&[]);
        if nbrs.is_empty() {
            return Ok(vec![(r1, self.reply(None))]);
        }
        match self.pending.iter().position(|p| nbrs.contains(p)) {
            Some(i) => {
                let r2 = self.pending.remove(i).expect("index from position");
                Ok(vec![(r2, self.reply(Some(r1))), (r1, self.reply(Some(r2)))])
            }
            None => {
                self.pending.push_back(r1);
                Ok(Vec::new())
            }
        }
    }

    /// True iff every region is locally converged in the binary phase.
    pub fn check_gc(&mut self) -> bool {
        self.gc = self.xi.iter().all(|&x| x) && self.kappa.iter().all(|&k| k);
        self.gc
    }
}
