//! Case, partition and configuration files, plus the synthetic case generator.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::case::{validate_case, BusId, Generator, Partition, PowerCase, RegionId, TransmissionLine};
use crate::error::{Error, Result};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_err(path: &Path, e: impl fmt::Display) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

pub fn case_from_json(text: &str) -> std::result::Result<PowerCase, serde_json::Error> {
    serde_json::from_str(text)
}

pub fn case_to_json(case: &PowerCase) -> String {
    serde_json::to_string_pretty(case).expect("case serializes") + "\n"
}

pub fn load_case(path: impl AsRef<Path>) -> Result<PowerCase> {
    let path = path.as_ref();
    let case = case_from_json(&read(path)?).map_err(|e| parse_err(path, e))?;
    let v = validate_case(&case);
    if !v.is_empty() {
        return Err(Error::InvalidCase(v));
    }
    Ok(case)
}

pub fn save_case(case: &PowerCase, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &case_to_json(case))
}

// The owner map is read by hand so that a bus listed twice is an error
// rather than a silent overwrite.
struct OwnerMap(BTreeMap<BusId, RegionId>);

impl<'de> Deserialize<'de> for OwnerMap {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = OwnerMap;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map from bus id to region id")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut m: A) -> std::result::Result<OwnerMap, A::Error> {
                let mut out = BTreeMap::new();
                while let Some((k, v)) = m.next_entry::<String, RegionId>()? {
                    let bus: BusId = k
                        .parse()
                        .map_err(|_| serde::de::Error::custom(format!("bus id {k:?} is not an integer")))?;
                    if out.insert(bus, v).is_some() {
                        return Err(serde::de::Error::custom(format!("bus {bus} is owned twice")));
                    }
                }
                Ok(OwnerMap(out))
            }
        }
        d.deserialize_map(V)
    }
}

#[derive(Deserialize)]
struct PartitionFile {
    region_count: usize,
    owner: OwnerMap,
}

pub fn partition_from_json(text: &str) -> std::result::Result<Partition, serde_json::Error> {
    let f: PartitionFile = serde_json::from_str(text)?;
    Ok(Partition {
        region_count: f.region_count,
        owner: f.owner.0,
    })
}

pub fn partition_to_json(p: &Partition) -> String {
    serde_json::to_string_pretty(p).expect("partition serializes") + "\n"
}

pub fn load_partition(path: impl AsRef<Path>) -> Result<Partition> {
    let path = path.as_ref();
    let p = partition_from_json(&read(path)?).map_err(|e| parse_err(path, e))?;
    p.validate()?;
    Ok(p)
}

/// Loads a partition and checks it is a total map over `case`.
pub fn load_partition_for(path: impl AsRef<Path>, case: &PowerCase) -> Result<Partition> {
    let p = load_partition(path)?;
    p.validate_for(case)?;
    Ok(p)
}

pub fn save_partition(p: &Partition, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &partition_to_json(p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Async,
    Sync,
    Central,
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "async" => Ok(Mode::Async),
            "sync" => Ok(Mode::Sync),
            "central" => Ok(Mode::Central),
            _ => Err(Error::Config(format!("unknown mode {s:?}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Async => "async",
            Mode::Sync => "sync",
            Mode::Central => "central",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// deterministic discrete-event simulator
    Sim,
    /// one thread per agent plus one for the controller
    Threaded,
}

impl FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim" => Ok(Backend::Sim),
            "threaded" => Ok(Backend::Threaded),
            _ => Err(Error::Config(format!("unknown backend {s:?}"))),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Sim => "sim",
            Backend::Threaded => "threaded",
        })
    }
}

/// Message delay distribution in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatencyModel {
    Constant { ms: f64 },
    Uniform { lo: f64, hi: f64 },
    /// `exp(N(mu, sigma))` milliseconds
    Lognormal { mu: f64, sigma: f64 },
}

fn floats(s: &str, n: usize, what: &str) -> Result<Vec<f64>> {
    let v: std::result::Result<Vec<f64>, _> = s.split(',').map(|x| x.trim().parse::<f64>()).collect();
    match v {
        Ok(v) if v.len() == n => Ok(v),
        _ => Err(Error::Config(format!("{what} expects {n} comma-separated numbers, got {s:?}"))),
    }
}

impl FromStr for LatencyModel {
    type Err = Error;
    /// `constant:MS`, `uniform:LO,HI` or `lognormal:MU,SIGMA`
    fn from_str(s: &str) -> Result<Self> {
        let (kind, args) = s.split_once(':').unwrap_or((s, ""));
        let m = match kind.trim() {
            "constant" => LatencyModel::Constant {
                ms: floats(args, 1, "constant")?[0],
            },
            "uniform" => {
                let v = floats(args, 2, "uniform")?;
                LatencyModel::Uniform { lo: v[0], hi: v[1] }
            }
            "lognormal" => {
                let v = floats(args, 2, "lognormal")?;
                LatencyModel::Lognormal { mu: v[0], sigma: v[1] }
            }
            _ => return Err(Error::Config(format!("unknown latency model {s:?}"))),
        };
        m.validate()?;
        Ok(m)
    }
}

impl fmt::Display for LatencyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatencyModel::Constant { ms } => write!(f, "constant:{ms}"),
            LatencyModel::Uniform { lo, hi } => write!(f, "uniform:{lo},{hi}"),
            LatencyModel::Lognormal { mu, sigma } => write!(f, "lognormal:{mu},{sigma}"),
        }
    }
}

impl LatencyModel {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            LatencyModel::Constant { ms } => ms >= 0.0,
            LatencyModel::Uniform { lo, hi } => lo >= 0.0 && hi >= lo,
            LatencyModel::Lognormal { mu, sigma } => mu.is_finite() && sigma >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid latency parameters {self}")))
        }
    }
}

/// How long a local solve takes on the simulated clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComputeModel {
    /// wall time of the actual solve
    Measured,
    /// `base_ms × region scale × (1 ± jitter)`, times `binary_factor` in the
    /// binary phase
    Synthetic {
        base_ms: f64,
        jitter: f64,
        binary_factor: f64,
    },
}

impl FromStr for ComputeModel {
    type Err = Error;
    /// `measured` or `synthetic:BASE_MS[,JITTER[,BINARY_FACTOR]]`
    fn from_str(s: &str) -> Result<Self> {
        let (kind, args) = s.split_once(':').unwrap_or((s, ""));
        match kind.trim() {
            "measured" if args.is_empty() => Ok(ComputeModel::Measured),
            "synthetic" => {
                let v: std::result::Result<Vec<f64>, _> = args.split(',').map(|x| x.trim().parse::<f64>()).collect();
                let v = v.map_err(|_| Error::Config(format!("bad synthetic compute model {s:?}")))?;
                if v.is_empty() || v.len() > 3 {
                    return Err(Error::Config(format!("bad synthetic compute model {s:?}")));
                }
                let m = ComputeModel::Synthetic {
                    base_ms: v[0],
                    jitter: v.get(1).copied().unwrap_or(0.0),
                    binary_factor: v.get(2).copied().unwrap_or(1.0),
                };
                if v[0] < 0.0 || !(0.0..1.0).contains(&v.get(1).copied().unwrap_or(0.0)) || v.get(2).copied().unwrap_or(1.0) <= 0.0 {
                    return Err(Error::Config(format!("invalid synthetic compute parameters {s:?}")));
                }
                Ok(m)
            }
            _ => Err(Error::Config(format!("unknown compute model {s:?}"))),
        }
    }
}

impl fmt::Display for ComputeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ComputeModel::Measured => f.write_str("measured"),
            ComputeModel::Synthetic {
                base_ms,
                jitter,
                binary_factor,
            } => write!(f, "synthetic:{base_ms},{jitter},{binary_factor}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub rho_theta: f64,
    pub rho_f: f64,
    pub rho_p: f64,
    pub alpha: f64,
    pub beta: f64,
    pub zeta: usize,
    pub max_iters: usize,
    pub mip_gap: f64,
    pub qp_tol: f64,
    pub seed: u64,
    pub latency_model: LatencyModel,
    pub compute_model: ComputeModel,
    /// per-region multiplier on synthetic compute time
    pub compute_scale: BTreeMap<RegionId, f64>,
    pub mode: Mode,
    pub backend: Backend,
    pub node_limit: usize,
    pub qp_iter_limit: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            rho_theta: 2.0,
            rho_f: 2.0,
            rho_p: 2.0,
            alpha: 1e-3,
            beta: 1e-4,
            zeta: 3,
            max_iters: 500,
            mip_gap: 1e-3,
            qp_tol: 1e-6,
            seed: 0,
            latency_model: LatencyModel::Constant { ms: 1.0 },
            compute_model: ComputeModel::Measured,
            compute_scale: BTreeMap::new(),
            mode: Mode::Async,
            backend: Backend::Sim,
            node_limit: 20_000,
            qp_iter_limit: 200,
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl RunConfig {
    pub const KEYS: [&'static str; 17] = [
        "rho_theta",
        "rho_f",
        "rho_p",
        "alpha",
        "beta",
        "zeta",
        "max_iters",
        "mip_gap",
        "qp_tol",
        "seed",
        "latency_model",
        "compute_model",
        "compute_scale",
        "mode",
        "backend",
        "node_limit",
        "qp_iter_limit",
    ];

    /// Sets one field from its text form. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "rho_theta" => self.rho_theta = num(key, v)?,
            "rho_f" => self.rho_f = num(key, v)?,
            "rho_p" => self.rho_p = num(key, v)?,
            "alpha" => self.alpha = num(key, v)?,
            "beta" => self.beta = num(key, v)?,
            "zeta" => self.zeta = num(key, v)?,
            "max_iters" => self.max_iters = num(key, v)?,
            "mip_gap" => self.mip_gap = num(key, v)?,
            "qp_tol" => self.qp_tol = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "latency_model" => self.latency_model = v.parse()?,
            "compute_model" => self.compute_model = v.parse()?,
            "compute_scale" => self.compute_scale = parse_scale(v)?,
            "mode" => self.mode = v.parse()?,
            "backend" => self.backend = v.parse()?,
            "node_limit" => self.node_limit = num(key, v)?,
            "qp_iter_limit" => self.qp_iter_limit = num(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "rho_theta" => self.rho_theta.to_string(),
            "rho_f" => self.rho_f.to_string(),
            "rho_p" => self.rho_p.to_string(),
            "alpha" => self.alpha.to_string(),
            "beta" => self.beta.to_string(),
            "zeta" => self.zeta.to_string(),
            "max_iters" => self.max_iters.to_string(),
            "mip_gap" => self.mip_gap.to_string(),
            "qp_tol" => self.qp_tol.to_string(),
            "seed" => self.seed.to_string(),
            "latency_model" => self.latency_model.to_string(),
            "compute_model" => self.compute_model.to_string(),
            "compute_scale" => self
                .compute_scale
                .iter()
                .map(|(r, f)| format!("{r}:{f}"))
                .collect::<Vec<_>>()
                .join(","),
            "mode" => self.mode.to_string(),
            "backend" => self.backend.to_string(),
            "node_limit" => self.node_limit.to_string(),
            "qp_iter_limit" => self.qp_iter_limit.to_string(),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("rho_theta", self.rho_theta),
            ("rho_f", self.rho_f),
            ("rho_p", self.rho_p),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("mip_gap", self.mip_gap),
            ("qp_tol", self.qp_tol),
        ];
        for (k, v) in pos {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{k} must be > 0, got {v}")));
            }
        }
        if self.zeta < 1 {
            return Err(Error::Config("zeta must be >= 1".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        if self.compute_scale.values().any(|f| !(*f > 0.0)) {
            return Err(Error::Config("compute_scale factors must be > 0".into()));
        }
        Ok(())
    }

    /// Parses a flat `key = value` document on top of the defaults. Blank
    /// lines and lines starting with `#` are ignored.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            c.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv_string(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).unwrap()))
            .collect()
    }

    pub fn scale_of(&self, r: RegionId) -> f64 {
        self.compute_scale.get(&r).copied().unwrap_or(1.0)
    }
}

fn parse_scale(v: &str) -> Result<BTreeMap<RegionId, f64>> {
    let mut m = BTreeMap::new();
    for part in v.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (r, f) = part
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("compute_scale entry {part:?} is not REGION:FACTOR")))?;
        m.insert(num("compute_scale", r.trim())?, num("compute_scale", f.trim())?);
    }
    Ok(m)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    RunConfig::from_kv_str(&read(path)?).map_err(|e| match e {
        Error::Config(m) => parse_err(path, m),
        e => e,
    })
}

pub fn save_config(c: &RunConfig, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &c.to_kv_string())
}

fn r3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Seeded synthetic case: each region is a random tree over a contiguous
/// block of bus ids, regions are joined by a random region tree plus a few
/// extra lines, and installed capacity is 1.6× the peak demand.
pub fn gen_synthetic(n_buses: usize, n_regions: usize, horizon: usize, seed: u64) -> Result<(PowerCase, Partition)> {
    if n_regions < 1 || n_regions > n_buses {
        return Err(Error::Config(format!(
            "need 1 <= regions <= buses, got {n_regions} regions for {n_buses} buses"
        )));
    }
    if horizon < 1 {
        return Err(Error::Config("horizon must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut blocks = Vec::new();
    let mut next = 0;
    for r in 0..n_regions {
        let size = n_buses / n_regions + usize::from(r < n_buses % n_regions);
        blocks.push((next..next + size).collect::<Vec<_>>());
        next += size;
    }
    let owner: BTreeMap<BusId, RegionId> = blocks
        .iter()
        .enumerate()
        .flat_map(|(r, b)| b.iter().map(move |&bus| (bus, r)))
        .collect();

    let mut pairs: BTreeSet<(BusId, BusId)> = BTreeSet::new();
    let add = |a: BusId, b: BusId, pairs: &mut BTreeSet<(BusId, BusId)>| {
        let key = (a.min(b), a.max(b));
        a != b && pairs.insert(key)
    };
    for block in &blocks {
        for i in 1..block.len() {
            let j = rng.random_range(0..i);
            add(block[i], block[j], &mut pairs);
        }
    }
    for r in 1..n_regions {
        let q = rng.random_range(0..r);
        let a = *blocks[r].choose(&mut rng).unwrap();
        let b = *blocks[q].choose(&mut rng).unwrap();
        add(a, b, &mut pairs);
    }
    let extra = (n_buses / 4).max(usize::from(n_buses > 2));
    let mut tries = 0;
    let mut added = 0;
    while added < extra && tries < 100 * extra {
        tries += 1;
        let a = rng.random_range(0..n_buses);
        let b = rng.random_range(0..n_buses);
        if add(a, b, &mut pairs) {
            added += 1;
        }
    }

    let profile = |t: usize| {
        let h = (t % 24) as f64;
        0.75 + 0.25 * (std::f64::consts::PI * (h - 6.0) / 12.0).sin()
    };
    let mut demand = BTreeMap::new();
    for b in 0..n_buses {
        let base: f64 = rng.random_range(5.0..20.0);
        let row: Vec<f64> = (0..horizon)
            .map(|t| r3(base * profile(t) * rng.random_range(0.95..1.05)))
            .collect();
        demand.insert(b, row);
    }
    let peak = (0..horizon)
        .map(|t| demand.values().map(|d: &Vec<f64>| d[t]).sum::<f64>())
        .fold(0.0, f64::max);

    let lines: Vec<TransmissionLine> = pairs
        .iter()
        .map(|&(a, b)| TransmissionLine {
            from_bus: a,
            to_bus: b,
            susceptance: r3(rng.random_range(5.0..15.0)),
            f_max: r3(peak * rng.random_range(0.5..1.0)),
        })
        .collect();

    let n_gen = n_regions.max(n_buses.div_ceil(3));
    let mut gen_bus: Vec<BusId> = blocks
        .iter()
        .map(|b| *b.choose(&mut rng).unwrap())
        .collect();
    while gen_bus.len() < n_gen {
        gen_bus.push(rng.random_range(0..n_buses));
    }
    gen_bus.sort_unstable();
    let weights: Vec<f64> = (0..n_gen).map(|_| rng.random_range(0.5..1.5)).collect();
    let wsum: f64 = weights.iter().sum();
    let capacity = 1.6 * peak;
    let generators = gen_bus
        .iter()
        .zip(&weights)
        .enumerate()
        .map(|(id, (&bus, w))| {
            let p_max = r3(capacity * w / wsum + 0.001);
            let p_min = r3(p_max * rng.random_range(0.2..0.4));
            Generator {
                id,
                bus,
                p_min,
                p_max,
                cost_dispatch: r3(rng.random_range(1.0..5.0)),
                cost_commit: r3(rng.random_range(2.0..10.0)),
                cost_startup: r3(rng.random_range(5.0..20.0)),
                cost_shutdown: r3(rng.random_range(0.0..5.0)),
                min_up: rng.random_range(1..=3),
                min_down: rng.random_range(1..=3),
                ramp: r3((p_max * rng.random_range(0.3..0.6)).max(p_min)),
            }
        })
        .collect();

    let case = PowerCase {
        buses: (0..n_buses).collect(),
        generators,
        lines,
        demand,
        horizon,
    };
    let part = Partition {
        region_count: n_regions,
        owner,
    };
    debug_assert!(validate_case(&case).is_empty());
    Ok((case, part))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn missing_horizon_names_field() {
        let (case, _) = fixtures::fixture_a();
        let mut v: serde_json::Value = serde_json::from_str(&case_to_json(&case)).unwrap();
        v.as_object_mut().unwrap().remove("horizon");
        let e = case_from_json(&v.to_string()).unwrap_err().to_string();
        assert!(e.contains("horizon"), "{e}");
    }

    #[test]
    fn partition_owned_twice() {
        let text = r#"{"region_count": 2, "owner": {"0": 0, "1": 1, "0": 1}}"#;
        let e = partition_from_json(text).unwrap_err().to_string();
        assert!(e.contains("owned twice"), "{e}");
    }

    #[test]
    fn config_round_trip() {
        let mut c = RunConfig::default();
        c.set("latency_model", "lognormal:0.1,0.5").unwrap();
        c.set("compute_model", "synthetic:5,0.2,3").unwrap();
        c.set("compute_scale", "1:10").unwrap();
        c.set("mode", "sync").unwrap();
        let back = RunConfig::from_kv_str(&c.to_kv_string()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(RunConfig::from_kv_str("zeta = 0").is_err());
        assert!(RunConfig::from_kv_str("rho_p = -1").is_err());
        assert!(RunConfig::from_kv_str("colour = blue").is_err());
        assert!(RunConfig::from_kv_str("latency_model = gamma:1").is_err());
    }

    #[test]
    fn synthetic_two_buses() {
        let (case, part) = gen_synthetic(2, 2, 2, 0).unwrap();
        assert_eq!(case.lines.len(), 1);
        assert_eq!(part.owner[&0], 0);
        assert_eq!(part.owner[&1], 1);
        assert!(validate_case(&case).is_empty());
    }

    #[test]
    fn synthetic_rejects_more_regions_than_buses() {
        assert!(gen_synthetic(2, 3, 2, 0).is_err());
    }
}
