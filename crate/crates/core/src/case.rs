//! Power network, region partition and per-region views.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};

pub type BusId = usize;
pub type RegionId = usize;
pub type GenId = usize;
/// Index of a line in `PowerCase::lines`.
pub type LineId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: GenId,
    pub bus: BusId,
    pub p_min: f64,
    pub p_max: f64,
    pub cost_dispatch: f64,
    pub cost_commit: f64,
    pub cost_startup: f64,
    pub cost_shutdown: f64,
    pub min_up: usize,
    pub min_down: usize,
    pub ramp: f64,
}

/// Flow is positive from `from_bus` to `to_bus`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmissionLine {
    #[serde(rename = "from")]
    pub from_bus: BusId,
    #[serde(rename = "to")]
    pub to_bus: BusId,
    pub susceptance: f64,
    pub f_max: f64,
}

impl TransmissionLine {
    pub fn touches(&self, b: BusId) -> bool {
        self.from_bus == b || self.to_bus == b
    }

    /// The endpoint that is not `b`.
    pub fn other(&self, b: BusId) -> BusId {
        if self.from_bus == b {
            self.to_bus
        } else {
            self.from_bus
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCase {
    pub buses: Vec<BusId>,
    pub generators: Vec<Generator>,
    pub lines: Vec<TransmissionLine>,
    /// `demand[b][t]` in MW
    pub demand: BTreeMap<BusId, Vec<f64>>,
    pub horizon: usize,
}

impl PowerCase {
    pub fn total_demand(&self, t: usize) -> f64 {
        self.demand.values().map(|d| d[t]).sum()
    }

    pub fn peak_demand(&self) -> f64 {
        (0..self.horizon).map(|t| self.total_demand(t)).fold(0.0, f64::max)
    }

    pub fn total_capacity(&self) -> f64 {
        self.generators.iter().map(|g| g.p_max).sum()
    }
}

/// Lists every broken invariant; empty when the case is valid.
pub fn validate_case(case: &PowerCase) -> Vec<Violation> {
    let mut v = Vec::new();
    let buses: BTreeSet<BusId> = case.buses.iter().copied().collect();
    if buses.len() != case.buses.len() {
        v.push(Violation::new("buses", "duplicate bus id"));
    }
    if case.buses.is_empty() {
        v.push(Violation::new("buses", "no buses"));
    }
    if case.horizon < 1 {
        v.push(Violation::new("horizon", "T<1"));
    }

    let mut gen_ids = BTreeSet::new();
    for g in &case.generators {
        let name = format!("g{}", g.id);
        if !gen_ids.insert(g.id) {
            v.push(Violation::new(&name, "duplicate generator id"));
        }
        if !buses.contains(&g.bus) {
            v.push(Violation::new(&name, format!("unknown bus {}", g.bus)));
        }
        if !(g.p_min >= 0.0) {
            v.push(Violation::new(&name, "p_min<0"));
        }
        if g.p_min > g.p_max {
            v.push(Violation::new(&name, "p_min>p_max"));
        }
        if g.min_up < 1 {
            v.push(Violation::new(&name, "min_up<1"));
        }
        if g.min_down < 1 {
            v.push(Violation::new(&name, "min_down<1"));
        }
        if !(g.ramp >= 0.0) {
            v.push(Violation::new(&name, "ramp<0"));
        }
        let costs = [
            ("cost_dispatch", g.cost_dispatch),
            ("cost_commit", g.cost_commit),
            ("cost_startup", g.cost_startup),
            ("cost_shutdown", g.cost_shutdown),
        ];
        for (what, c) in costs {
            if !(c >= 0.0) {
                v.push(Violation::new(&name, format!("{what}<0")));
            }
        }
    }

    let mut pairs = BTreeMap::new();
    for (i, l) in case.lines.iter().enumerate() {
        let name = format!("line{}({},{})", i, l.from_bus, l.to_bus);
        if l.from_bus == l.to_bus {
            v.push(Violation::new(&name, "from_bus==to_bus"));
        }
        for b in [l.from_bus, l.to_bus] {
            if !buses.contains(&b) {
                v.push(Violation::new(&name, format!("unknown bus {b}")));
            }
        }
        if !(l.susceptance > 0.0) {
            v.push(Violation::new(&name, "susceptance<=0"));
        }
        if !(l.f_max > 0.0) {
            v.push(Violation::new(&name, "f_max<=0"));
        }
        let key = (l.from_bus.min(l.to_bus), l.from_bus.max(l.to_bus));
        if let Some(first) = pairs.insert(key, i) {
            v.push(Violation::new(
                format!("lines ({},{})", key.0, key.1),
                format!("duplicate line (line{first} and line{i})"),
            ));
        }
    }

    for &b in &buses {
        match case.demand.get(&b) {
            None => v.push(Violation::new(format!("bus{b}"), "missing demand row")),
            Some(row) => {
                if row.len() != case.horizon {
                    v.push(Violation::new(
                        format!("bus{b}"),
                        format!("demand has {} entries, horizon is {}", row.len(), case.horizon),
                    ));
                }
                if row.iter().any(|d| !(*d >= 0.0)) {
                    v.push(Violation::new(format!("bus{b}"), "demand<0"));
                }
            }
        }
    }
    for b in case.demand.keys() {
        if !buses.contains(b) {
            v.push(Violation::new(format!("bus{b}"), "demand for unknown bus"));
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub region_count: usize,
    pub owner: BTreeMap<BusId, RegionId>,
}

impl Partition {
    /// Every bus in one region.
    pub fn single(case: &PowerCase) -> Self {
        Self {
            region_count: 1,
            owner: case.buses.iter().map(|&b| (b, 0)).collect(),
        }
    }

    pub fn owned_by(&self, r: RegionId) -> Vec<BusId> {
        self.owner.iter().filter(|(_, &o)| o == r).map(|(&b, _)| b).collect()
    }

    /// Checks the partition on its own: region ids dense and non-empty.
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.region_count];
        for (&b, &r) in &self.owner {
            if r >= self.region_count {
                return Err(Error::InvalidPartition(format!(
                    "bus {b} owned by region {r}, but region_count is {}",
                    self.region_count
                )));
            }
            seen[r] = true;
        }
        if let Some(r) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidPartition(format!("region {r} owns no bus")));
        }
        Ok(())
    }

    /// Checks that the partition is a total map over the case's buses.
    pub fn validate_for(&self, case: &PowerCase) -> Result<()> {
        self.validate()?;
        for b in &case.buses {
            if !self.owner.contains_key(b) {
                return Err(Error::InvalidPartition(format!(
                    "total map violated: bus {b} has no owner"
                )));
            }
        }
        for b in self.owner.keys() {
            if !case.buses.contains(b) {
                return Err(Error::InvalidPartition(format!("bus {b} is not in the case")));
            }
        }
        Ok(())
    }
}

/// One region's slice of the network. All sets are sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionView {
    pub region: RegionId,
    pub region_count: usize,
    pub horizon: usize,
    pub internal: Vec<BusId>,
    pub boundary: Vec<BusId>,
    pub foreign: Vec<BusId>,
    pub generators: Vec<Generator>,
    pub tie_lines: Vec<LineId>,
    pub local_lines: Vec<LineId>,
    /// data of every tie and local line, by line id
    pub lines: BTreeMap<LineId, TransmissionLine>,
    pub neighbors: Vec<RegionId>,
    /// boundary bus → regions it has lines into
    pub neighbor_of_bus: BTreeMap<BusId, Vec<RegionId>>,
    /// owned bus → adjacent buses
    pub adjacency: BTreeMap<BusId, Vec<BusId>>,
    pub foreign_owner: BTreeMap<BusId, RegionId>,
    /// demand rows of owned buses
    pub demand: BTreeMap<BusId, Vec<f64>>,
    /// set when this region owns the globally lowest bus, whose angle is pinned to 0
    pub reference_bus: Option<BusId>,
}

impl RegionView {
    /// `I_r ∪ U_r`
    pub fn owned(&self) -> Vec<BusId> {
        let mut v: Vec<BusId> = self.internal.iter().chain(&self.boundary).copied().collect();
        v.sort_unstable();
        v
    }

    /// `I_r ∪ U_r ∪ V_r`, the buses carrying an angle variable.
    pub fn angle_buses(&self) -> Vec<BusId> {
        let mut v: Vec<BusId> = self
            .internal
            .iter()
            .chain(&self.boundary)
            .chain(&self.foreign)
            .copied()
            .collect();
        v.sort_unstable();
        v
    }

    pub fn line(&self, id: LineId) -> &TransmissionLine {
        &self.lines[&id]
    }

    pub fn is_owned(&self, b: BusId) -> bool {
        self.internal.binary_search(&b).is_ok() || self.boundary.binary_search(&b).is_ok()
    }

    /// Tie lines into `neighbor`.
    pub fn ties_with(&self, neighbor: RegionId) -> Vec<LineId> {
        self.tie_lines
            .iter()
            .copied()
            .filter(|&l| {
                let line = self.line(l);
                let far = if self.is_owned(line.from_bus) { line.to_bus } else { line.from_bus };
                self.foreign_owner[&far] == neighbor
            })
            .collect()
    }

    /// Buses shared with `neighbor`: both endpoints of every tie line between
    /// the two regions.
    pub fn shared_buses(&self, neighbor: RegionId) -> Vec<BusId> {
        let set: BTreeSet<BusId> = self
            .ties_with(neighbor)
            .into_iter()
            .flat_map(|l| [self.line(l).from_bus, self.line(l).to_bus])
            .collect();
        set.into_iter().collect()
    }

    pub fn owned_demand(&self, t: usize) -> f64 {
        self.demand.values().map(|d| d[t]).sum()
    }
}

/// Builds region `r`'s view. Deterministic: everything is iterated in
/// ascending id order.
pub fn classify_region(case: &PowerCase, partition: &Partition, r: RegionId) -> Result<RegionView> {
    if r >= partition.region_count {
        return Err(Error::UnknownRegion(r));
    }
    partition.validate_for(case)?;
    let owner = &partition.owner;
    let mut buses: Vec<BusId> = case.buses.clone();
    buses.sort_unstable();
    let owned: Vec<BusId> = buses.iter().copied().filter(|b| owner[b] == r).collect();

    let mut tie_lines = Vec::new();
    let mut local_lines = Vec::new();
    let mut lines = BTreeMap::new();
    let mut foreign = BTreeSet::new();
    let mut foreign_owner = BTreeMap::new();
    let mut neighbors = BTreeSet::new();
    let mut neighbor_of_bus: BTreeMap<BusId, BTreeSet<RegionId>> = BTreeMap::new();
    let mut adjacency: BTreeMap<BusId, BTreeSet<BusId>> = owned.iter().map(|&b| (b, BTreeSet::new())).collect();

    for (i, l) in case.lines.iter().enumerate() {
        let (ou, ov) = (owner[&l.from_bus] == r, owner[&l.to_bus] == r);
        if ou {
            adjacency.get_mut(&l.from_bus).unwrap().insert(l.to_bus);
        }
        if ov {
            adjacency.get_mut(&l.to_bus).unwrap().insert(l.from_bus);
        }
        match (ou, ov) {
            (true, true) => {
                local_lines.push(i);
                lines.insert(i, l.clone());
            }
            (true, false) | (false, true) => {
                let (mine, far) = if ou { (l.from_bus, l.to_bus) } else { (l.to_bus, l.from_bus) };
                let far_owner = owner[&far];
                tie_lines.push(i);
                lines.insert(i, l.clone());
                foreign.insert(far);
                foreign_owner.insert(far, far_owner);
                neighbors.insert(far_owner);
                neighbor_of_bus.entry(mine).or_default().insert(far_owner);
            }
            (false, false) => {}
        }
    }

    let (boundary, internal): (Vec<BusId>, Vec<BusId>) =
        owned.iter().partition(|b| neighbor_of_bus.contains_key(b));
    let mut generators: Vec<Generator> = case
        .generators
        .iter()
        .filter(|g| owner.get(&g.bus) == Some(&r))
        .cloned()
        .collect();
    generators.sort_by_key(|g| g.id);
    let demand = owned.iter().map(|&b| (b, case.demand[&b].clone())).collect();
    let lowest = buses[0];

    Ok(RegionView {
        region: r,
        region_count: partition.region_count,
        horizon: case.horizon,
        internal,
        boundary,
        foreign: foreign.into_iter().collect(),
        generators,
        tie_lines,
        local_lines,
        lines,
        neighbors: neighbors.into_iter().collect(),
        neighbor_of_bus: neighbor_of_bus
            .into_iter()
            .map(|(b, s)| (b, s.into_iter().collect()))
            .collect(),
        adjacency: adjacency
            .into_iter()
            .map(|(b, s)| (b, s.into_iter().collect()))
            .collect(),
        foreign_owner,
        demand,
        reference_bus: (owner[&lowest] == r).then_some(lowest),
    })
}

/// Views for every region, in region order.
pub fn classify_all(case: &PowerCase, partition: &Partition) -> Result<Vec<RegionView>> {
    (0..partition.region_count)
        .map(|r| classify_region(case, partition, r))
        .collect()
}

/// Region adjacency: region → neighbouring regions.
pub fn region_graph(views: &[RegionView]) -> BTreeMap<RegionId, Vec<RegionId>> {
    views.iter().map(|v| (v.region, v.neighbors.clone())).collect()
}
