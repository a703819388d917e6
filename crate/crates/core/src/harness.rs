//! Scenario generation for the five-area reference network, load
//! calibration, replicated experiment campaigns, metrics and CSV output.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    designated_paths, multi_domain_drf, per_domain_drf, uniform_allocation, DrfSettings,
};
use crate::drp::{fmt_num, run_market, AuctionOutcome, DrpConfig};
use crate::error::{Error, Result};
use crate::model::{
    AllocationState, AreaId, DemandEntry, DemandVector, Domain, Market, NodeId, NodeSpec,
    PathSpec, ResourceVector, Scenario, SliceArea, SliceId, SliceSpec, Topology,
};
use crate::oracle::{self, equilibrium_uniform_spec};
use crate::utility::{delay_at_load, DelayParams, UtilityParams};

pub const RESOURCE_LABELS: [&str; 4] = ["cpu_cores", "ram_gb", "mem_bw_gbps", "comm_bw_gbps"];

/// Budget per slice and area, in cents.
pub const DEFAULT_BUDGET: f64 = 10000.0;

/// Scale applied on top of the bottleneck threshold found by calibration to
/// obtain the high-load demand scale.
pub const DEFAULT_HIGH_LOAD_MULTIPLIER: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Load {
    High,
    Mid,
    Low,
    /// Fraction of the high-load demand scale.
    Custom(f64),
}

impl Load {
    pub fn factor(self) -> f64 {
        match self {
            Load::High => 1.0,
            Load::Mid => 0.5,
            Load::Low => 0.25,
            Load::Custom(f) => f,
        }
    }
}

impl fmt::Display for Load {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Load::High => write!(f, "high"),
            Load::Mid => write!(f, "mid"),
            Load::Low => write!(f, "low"),
            Load::Custom(v) => write!(f, "custom:{v}"),
        }
    }
}

impl FromStr for Load {
    type Err = Error;

    fn from_str(s: &str) -> Result<Load> {
        match s {
            "high" => Ok(Load::High),
            "mid" => Ok(Load::Mid),
            "low" => Ok(Load::Low),
            other => other
                .strip_prefix("custom:")
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|v| *v > 0.0)
                .map(Load::Custom)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown load level {other:?}"))),
        }
    }
}

/// How the demand scale of generated slices is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiRule {
    /// Bottleneck threshold times `multiplier`, then scaled by the load factor.
    Calibrated { multiplier: f64 },
    /// Fixed high-load scale, then scaled by the load factor.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub slices: usize,
    pub load: Load,
    pub alpha_range: (f64, f64),
    pub phi: PhiRule,
    pub budget: f64,
    pub delay: DelayParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 1,
            slices: 50,
            load: Load::High,
            alpha_range: (1.0, 2.0),
            phi: PhiRule::Calibrated {
                multiplier: DEFAULT_HIGH_LOAD_MULTIPLIER,
            },
            budget: DEFAULT_BUDGET,
            delay: DelayParams::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.alpha_range;
        if !(a > 0.0 && b >= a && b.is_finite()) {
            return Err(Error::InvalidConfig(format!("invalid alpha range [{a}, {b}]")));
        }
        if !(self.load.factor() > 0.0) {
            return Err(Error::InvalidConfig("load factor must be positive".into()));
        }
        match self.phi {
            PhiRule::Calibrated { multiplier } if !(multiplier > 0.0) => {
                return Err(Error::InvalidConfig("calibration multiplier must be positive".into()))
            }
            PhiRule::Fixed(v) if !(v > 0.0) => {
                return Err(Error::InvalidConfig("phi must be positive".into()))
            }
            _ => {}
        }
        if !(self.budget >= 0.0) {
            return Err(Error::InvalidConfig("budget must be non-negative".into()));
        }
        self.delay
            .validate()
            .map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

const AREAS: usize = 5;

fn ap_capacity(kind: usize) -> [f64; 4] {
    if kind == 0 {
        [16.0, 32.0, 10.0, 1.0]
    } else {
        [8.0, 16.0, 5.0, 1.0]
    }
}

const CRAN_CAPACITY: [f64; 4] = [48.0, 384.0, 40.0, 7.0];
const CN_CAPACITY: [f64; 4] = [96.0, 384.0, 100.0, 14.0];

/// CRANs reachable from an area: the outer areas see one, the rest both.
fn crans_of(area: usize) -> Vec<usize> {
    match area {
        0 => vec![10],
        4 => vec![11],
        _ => vec![10, 11],
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// The reference topology with freshly drawn OPEX.
fn reference_topology(rng: &mut ChaCha8Rng) -> Topology {
    let mut nodes = Vec::with_capacity(13);
    let push = |nodes: &mut Vec<NodeSpec>, domain, cap: [f64; 4], rng: &mut ChaCha8Rng| {
        let opex = vec![
            uniform(rng, 1.0, 2.0),
            uniform(rng, 0.5, 1.0),
            uniform(rng, 0.5, 1.0),
            uniform(rng, 1.0, 10.0),
        ];
        nodes.push(NodeSpec {
            id: NodeId(nodes.len()),
            domain,
            resources: RESOURCE_LABELS.iter().map(|s| s.to_string()).collect(),
            capacity: ResourceVector(cap.to_vec()),
            opex: ResourceVector(opex),
        });
    };
    for _ in 0..AREAS {
        push(&mut nodes, Domain::Ran, ap_capacity(0), rng);
        push(&mut nodes, Domain::Ran, ap_capacity(1), rng);
    }
    push(&mut nodes, Domain::Cran, CRAN_CAPACITY, rng);
    push(&mut nodes, Domain::Cran, CRAN_CAPACITY, rng);
    push(&mut nodes, Domain::Cn, CN_CAPACITY, rng);
    let mut paths = Vec::new();
    for area in 0..AREAS {
        for ap in [2 * area, 2 * area + 1] {
            for cran in crans_of(area) {
                paths.push(PathSpec {
                    id: crate::model::PathId(paths.len()),
                    area: AreaId(area),
                    nodes: vec![NodeId(ap), NodeId(cran), NodeId(12)],
                });
            }
        }
    }
    Topology {
        areas: AREAS,
        nodes,
        paths,
    }
}

/// Builds the scenario with every demand scale set to `phi`.
fn build_scenario(config: &ScenarioConfig, phi: f64) -> Result<Scenario> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let topology = reference_topology(&mut rng);
    let mut slices = Vec::with_capacity(config.slices);
    for n in 0..config.slices {
        let alpha = uniform(&mut rng, config.alpha_range.0, config.alpha_range.1);
        let coeff2 = [1.0, 2.0, 4.0, 6.0][rng.gen_range(0..4)];
        // Traffic is counted in units of 100 Mb/s; bandwidth demands in Gb/s.
        let per_node: Vec<Vec<f64>> = topology
            .nodes
            .iter()
            .map(|node| {
                let ran = node.domain == Domain::Ran;
                let c1 = if ran { 2.0 } else { 1.0 };
                let c2 = if ran { coeff2 } else { 2.0 };
                vec![
                    c1 * uniform(&mut rng, 0.4, 0.8),
                    uniform(&mut rng, 1.0, 2.0),
                    uniform(&mut rng, 0.01, 0.02),
                    c2 * uniform(&mut rng, 0.05, 0.1),
                ]
            })
            .collect();
        let demands = topology
            .paths
            .iter()
            .flat_map(|p| {
                p.nodes.iter().map(|&i| DemandEntry {
                    path: p.id,
                    node: i,
                    demand: DemandVector(per_node[i.0].clone()),
                })
            })
            .collect::<Vec<_>>();
        slices.push(SliceSpec {
            id: SliceId(n),
            areas: (0..AREAS)
                .map(|a| SliceArea {
                    area: AreaId(a),
                    utility: UtilityParams { phi, alpha },
                    budget: config.budget,
                    delay: config.delay,
                })
                .collect(),
            demands,
        });
    }
    let scenario = Scenario { topology, slices };
    scenario.validate()?;
    Ok(scenario)
}

pub fn set_phi(scenario: &mut Scenario, phi: f64) {
    for slice in &mut scenario.slices {
        for sa in &mut slice.areas {
            sa.utility.phi = phi;
        }
    }
}

/// Generated scenario plus the high-load demand scale it was derived from.
#[derive(Debug, Clone)]
pub struct Generated {
    pub scenario: Scenario,
    pub phi_high: f64,
    /// Bottleneck threshold found by calibration, when calibrated.
    pub threshold: Option<f64>,
}

pub fn generate_scenario(config: &ScenarioConfig) -> Result<Scenario> {
    Ok(generate(config, &DrpConfig::default())?.scenario)
}

pub fn generate(config: &ScenarioConfig, drp: &DrpConfig) -> Result<Generated> {
    let mut scenario = build_scenario(config, 1.0)?;
    let (phi_high, threshold) = match config.phi {
        PhiRule::Fixed(v) => (v, None),
        PhiRule::Calibrated { multiplier } => {
            let t = calibrate(&scenario, drp)?;
            (t * multiplier, Some(t))
        }
    };
    set_phi(&mut scenario, phi_high * config.load.factor());
    Ok(Generated {
        scenario,
        phi_high,
        threshold,
    })
}

const BOOKED_TOL: f64 = 1e-6;

/// Nodes with some resource the auction has sold out (fraction one).
pub fn booked_by_price(outcome: &AuctionOutcome) -> Vec<bool> {
    outcome
        .prices
        .eta
        .iter()
        .map(|e| e.iter().any(|&v| v >= 1.0 - BOOKED_TOL))
        .collect()
}

/// Nodes with some resource loaded to capacity.
pub fn booked_by_load(allocation: &AllocationState, scenario: &Scenario) -> Vec<bool> {
    full_nodes(allocation, scenario, BOOKED_TOL)
}

/// Every path crosses a fully booked node.
pub fn all_paths_bottlenecked(scenario: &Scenario, booked: &[bool]) -> bool {
    scenario
        .topology
        .paths
        .iter()
        .all(|p| p.nodes.iter().any(|i| booked[i.0]))
}

/// Every path that carries traffic crosses a fully booked node.
pub fn paths_in_use_bottlenecked(
    allocation: &AllocationState,
    scenario: &Scenario,
    booked: &[bool],
) -> bool {
    let mut used = vec![false; scenario.topology.paths.len()];
    for (&(_, p), &x) in allocation.x_path() {
        if x > 0.0 {
            used[p.0] = true;
        }
    }
    scenario
        .topology
        .paths
        .iter()
        .filter(|p| used[p.id.0])
        .all(|p| p.nodes.iter().any(|i| booked[i.0]))
}

fn full_nodes(allocation: &AllocationState, scenario: &Scenario, tol: f64) -> Vec<bool> {
    let load = node_loads(allocation, scenario);
    scenario
        .topology
        .nodes
        .iter()
        .zip(&load)
        .map(|(n, l)| l.iter().zip(n.capacity.iter()).any(|(u, c)| *u >= c * (1.0 - tol)))
        .collect()
}

fn node_loads(allocation: &AllocationState, scenario: &Scenario) -> Vec<Vec<f64>> {
    let mut load: Vec<Vec<f64>> = scenario
        .topology
        .nodes
        .iter()
        .map(|n| vec![0.0; n.resource_count()])
        .collect();
    for ((_, i), a) in allocation.node_alloc() {
        for (l, v) in load[i.0].iter_mut().zip(a.iter()) {
            *l += v;
        }
    }
    load
}

/// Smallest common demand scale (1% resolution) at which the auction, run
/// with `drp` minus budget enforcement, leaves a fully booked resource on
/// every path.
pub fn calibrate(scenario: &Scenario, drp: &DrpConfig) -> Result<f64> {
    let cfg = DrpConfig {
        budget_enforcement: false,
        ..*drp
    };
    let base = Market::new(scenario)?;
    let test = |phi: f64| -> Result<bool> {
        let mut s = scenario.clone();
        set_phi(&mut s, phi);
        let mut market = base.clone();
        for g in &mut market.groups {
            g.params.utility.phi = phi;
        }
        let out = run_market(&market, &s, &cfg, None, false)?;
        Ok(all_paths_bottlenecked(&s, &booked_by_price(&out)))
    };
    let mut lo = 0.0;
    let mut hi = 0.01;
    let mut doublings = 0;
    while !test(hi)? {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 60 {
            return Err(Error::InvalidConfig(
                "calibration failed: no demand scale bottlenecks every path".into(),
            ));
        }
    }
    if lo == 0.0 {
        lo = hi / 2.0;
        while test(lo)? {
            hi = lo;
            lo /= 2.0;
            if lo < 1e-9 {
                return Ok(hi);
            }
        }
    }
    while hi / lo > 1.01 {
        let mid = (lo * hi).sqrt();
        if test(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mechanism {
    Drp,
    MdDrf,
    PdDrf,
    Uniform,
}

impl Mechanism {
    pub const ALL: [Mechanism; 4] = [
        Mechanism::Drp,
        Mechanism::MdDrf,
        Mechanism::PdDrf,
        Mechanism::Uniform,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Mechanism::Drp => "drp",
            Mechanism::MdDrf => "md-drf",
            Mechanism::PdDrf => "pd-drf",
            Mechanism::Uniform => "uniform",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One CSV row: one mechanism's outcome for one (slice, area) of one
/// replication. Run-level fields repeat on every row of the run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub mechanism: Mechanism,
    pub seed: u64,
    pub load: Load,
    pub replication: usize,
    pub slice: SliceId,
    pub area: AreaId,
    pub x: f64,
    /// Traffic relative to the uniform comparator.
    pub r: f64,
    pub welfare: f64,
    pub iterations: Option<usize>,
    pub kkt_residual: Option<f64>,
    pub converged: bool,
    pub opex_per_unit: f64,
    /// (domain, resource label, mean load / capacity), in column order.
    pub utilization: Vec<(Domain, String, f64)>,
    /// Demand scale and delay parameters, for delay comparisons.
    pub phi: f64,
    pub delay: DelayParams,
}

/// Utilization column keys for a topology: domains in order, resource labels
/// in order of first appearance within each domain.
pub fn utilization_columns(topology: &Topology) -> Vec<(Domain, String)> {
    let mut cols = Vec::new();
    for d in Domain::ALL {
        for node in topology.nodes_in_domain(d) {
            for label in &node.resources {
                let key = (d, label.clone());
                if !cols.contains(&key) {
                    cols.push(key);
                }
            }
        }
    }
    cols
}

/// Mean over each domain's nodes of load / capacity, per resource label.
pub fn utilization(allocation: &AllocationState, scenario: &Scenario) -> Vec<(Domain, String, f64)> {
    let load = node_loads(allocation, scenario);
    utilization_columns(&scenario.topology)
        .into_iter()
        .map(|(d, label)| {
            let mut sum = 0.0;
            let mut count = 0usize;
            for node in scenario.topology.nodes_in_domain(d) {
                if let Some(r) = node.resources.iter().position(|l| *l == label) {
                    sum += (load[node.id.0][r] / node.capacity.0[r]).min(1.0);
                    count += 1;
                }
            }
            (d, label, if count > 0 { sum / count as f64 } else { 0.0 })
        })
        .collect()
}

/// OPEX of all allocated resources per unit of carried traffic.
pub fn opex_per_unit(allocation: &AllocationState, scenario: &Scenario) -> f64 {
    let load = node_loads(allocation, scenario);
    let cost: f64 = scenario
        .topology
        .nodes
        .iter()
        .zip(&load)
        .map(|(n, l)| n.opex.iter().zip(l).map(|(q, a)| q * a).sum::<f64>())
        .sum();
    let traffic = allocation.total_traffic();
    if traffic > 0.0 {
        cost / traffic
    } else {
        0.0
    }
}

/// Everything computed for one scenario.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub drp: AuctionOutcome,
    pub allocations: BTreeMap<Mechanism, AllocationState>,
    /// Uniform comparator built from the auction's outcome.
    pub uniform: AllocationState,
    pub records: Vec<MetricsRecord>,
}

impl Evaluation {
    pub fn converged(&self) -> bool {
        self.drp.report.converged()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub mechanisms: Vec<Mechanism>,
    pub drp: DrpConfig,
    /// Stop DRF flows at their demand at OPEX prices. Off by default: the
    /// baselines hand out whole capacities.
    pub drf_satiation_cap: bool,
    pub record_trace: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mechanisms: Mechanism::ALL.to_vec(),
            drp: DrpConfig::default(),
            drf_satiation_cap: false,
            record_trace: false,
        }
    }
}

/// Run labels copied into every metrics row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunLabel {
    pub seed: u64,
    pub load: Load,
    pub replication: usize,
}

/// Runs the auction, derives payment weights, runs the weighted DRF
/// baselines and the uniform comparator, and assembles metrics rows.
pub fn evaluate(scenario: &Scenario, options: &EvalOptions, label: RunLabel) -> Result<Evaluation> {
    let RunLabel {
        seed,
        load,
        replication,
    } = label;
    let mechanisms = &options.mechanisms;
    let market = Market::new(scenario)?;
    let outcome = run_market(&market, scenario, &options.drp, None, options.record_trace)?;
    let spec = equilibrium_uniform_spec(&outcome.allocation, &outcome.bids, scenario)?;
    let uniform = uniform_allocation(scenario, &spec)?;
    let designated = designated_paths(scenario)?;
    let weights = DrfSettings {
        satiation_cap: options.drf_satiation_cap,
        ..DrfSettings::weighted(outcome.bids.per_area.clone())
    };

    let mut allocations = BTreeMap::new();
    for &m in mechanisms.iter() {
        let alloc = match m {
            Mechanism::Drp => outcome.allocation.clone(),
            Mechanism::MdDrf => multi_domain_drf(scenario, &weights, &designated)?,
            Mechanism::PdDrf => per_domain_drf(scenario, &weights, &designated)?,
            Mechanism::Uniform => uniform.clone(),
        };
        allocations.insert(m, alloc);
    }

    let mut records = Vec::new();
    for (&m, alloc) in &allocations {
        let welfare = oracle::welfare(alloc, scenario)?;
        let opex = opex_per_unit(alloc, scenario);
        let util = utilization(alloc, scenario);
        let (iterations, kkt) = if m == Mechanism::Drp {
            (Some(outcome.report.iterations), outcome.report.kkt_residual)
        } else {
            (None, None)
        };
        for slice in &scenario.slices {
            for sa in &slice.areas {
                let x = alloc.area_traffic(slice.id, sa.area);
                let xu = uniform.area_traffic(slice.id, sa.area);
                records.push(MetricsRecord {
                    mechanism: m,
                    seed,
                    load,
                    replication,
                    slice: slice.id,
                    area: sa.area,
                    x,
                    r: if xu > 0.0 { x / xu } else { f64::NAN },
                    welfare,
                    iterations,
                    kkt_residual: kkt,
                    converged: outcome.report.converged(),
                    opex_per_unit: opex,
                    utilization: util.clone(),
                    phi: outcome.phi[&(slice.id, sa.area)],
                    delay: sa.delay,
                });
            }
        }
    }
    Ok(Evaluation {
        drp: outcome,
        allocations,
        uniform,
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub base: ScenarioConfig,
    pub loads: Vec<Load>,
    pub replications: usize,
    pub options: EvalOptions,
}

/// Independent seed for each replication, drawn from its own stream.
pub fn replication_seed(base: u64, replication: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(replication as u64 + 1);
    rng.next_u64()
}

/// One replication's outcome at one load level.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub replication: usize,
    pub seed: u64,
    pub load: Load,
    pub phi: f64,
    pub threshold: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Whether every in-use path is bottlenecked, per mechanism.
    pub bottlenecked: BTreeMap<Mechanism, bool>,
    pub envy_free: bool,
    pub sharing_incentive: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentTable {
    pub records: Vec<MetricsRecord>,
    pub runs: Vec<RunSummary>,
}

impl ExperimentTable {
    pub fn all_converged(&self) -> bool {
        self.runs.iter().all(|r| r.converged)
    }

    pub fn select(&self, mechanism: Mechanism, load: Load) -> impl Iterator<Item = &MetricsRecord> {
        self.records
            .iter()
            .filter(move |r| r.mechanism == mechanism && r.load == load)
    }

    /// Mean and 95% half-width of a per-run quantity.
    pub fn per_run_stat(
        &self,
        mechanism: Mechanism,
        load: Load,
        f: impl Fn(&[&MetricsRecord]) -> f64,
    ) -> Stat {
        let mut by_run: BTreeMap<usize, Vec<&MetricsRecord>> = BTreeMap::new();
        for r in self.select(mechanism, load) {
            by_run.entry(r.replication).or_default().push(r);
        }
        let values: Vec<f64> = by_run.values().map(|rows| f(rows)).collect();
        Stat::of(&values)
    }

    /// Mean improvement ratio over all (slice, area) rows.
    pub fn mean_ratio(&self, mechanism: Mechanism, load: Load) -> Stat {
        let values: Vec<f64> = self
            .select(mechanism, load)
            .map(|r| r.r)
            .filter(|v| v.is_finite())
            .collect();
        Stat::of(&values)
    }

    /// Mean total carried traffic per run.
    pub fn mean_capacity(&self, mechanism: Mechanism, load: Load) -> Stat {
        self.per_run_stat(mechanism, load, |rows| rows.iter().map(|r| r.x).sum())
    }

    pub fn mean_opex(&self, mechanism: Mechanism, load: Load) -> Stat {
        self.per_run_stat(mechanism, load, |rows| rows[0].opex_per_unit)
    }

    pub fn mean_utilization(&self, mechanism: Mechanism, load: Load) -> Vec<(Domain, String, f64)> {
        let mut by_run: BTreeMap<usize, &MetricsRecord> = BTreeMap::new();
        for r in self.select(mechanism, load) {
            by_run.entry(r.replication).or_insert(r);
        }
        let Some(first) = by_run.values().next() else {
            return Vec::new();
        };
        let n = by_run.len() as f64;
        first
            .utilization
            .iter()
            .enumerate()
            .map(|(k, (d, label, _))| {
                let mean = by_run.values().map(|r| r.utilization[k].2).sum::<f64>() / n;
                (*d, label.clone(), mean)
            })
            .collect()
    }

    /// P(R > r) over all (slice, area) rows on the grid 1.0, 1.1, ..., 3.0.
    pub fn ratio_ccdf(&self, mechanism: Mechanism, load: Load) -> Vec<(f64, f64)> {
        let values: Vec<f64> = self
            .select(mechanism, load)
            .map(|r| r.r)
            .filter(|v| v.is_finite())
            .collect();
        ccdf(&values, &ratio_grid())
    }
}

pub fn ratio_grid() -> Vec<f64> {
    (0..=20).map(|k| 1.0 + 0.1 * k as f64).collect()
}

/// Empirical P(V > r) at each grid point.
pub fn ccdf(values: &[f64], grid: &[f64]) -> Vec<(f64, f64)> {
    grid.iter()
        .map(|&r| {
            let p = if values.is_empty() {
                0.0
            } else {
                values.iter().filter(|&&v| v > r).count() as f64 / values.len() as f64
            };
            (r, p)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci95: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len();
        if n == 0 {
            return Stat {
                mean: f64::NAN,
                ci95: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let ci95 = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            1.96 * (var / n as f64).sqrt()
        } else {
            0.0
        };
        Stat { mean, ci95, n }
    }
}

/// Runs every replication of the plan. Replications run in parallel; the
/// table is assembled in replication order.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentTable> {
    plan.base.validate()?;
    plan.options.drp.validate()?;
    let reps: Vec<Result<(Vec<MetricsRecord>, Vec<RunSummary>)>> = (0..plan.replications)
        .into_par_iter()
        .map(|rep| run_replication(plan, rep))
        .collect();
    let mut table = ExperimentTable::default();
    for r in reps {
        let (records, runs) = r?;
        table.records.extend(records);
        table.runs.extend(runs);
    }
    Ok(table)
}

fn run_replication(plan: &ExperimentPlan, rep: usize) -> Result<(Vec<MetricsRecord>, Vec<RunSummary>)> {
    let seed = replication_seed(plan.base.seed, rep);
    let config = ScenarioConfig {
        seed,
        load: Load::High,
        ..plan.base.clone()
    };
    let generated = generate(&config, &plan.options.drp)?;
    let mut records = Vec::new();
    let mut runs = Vec::new();
    for &load in &plan.loads {
        let mut scenario = generated.scenario.clone();
        let phi = generated.phi_high * load.factor();
        set_phi(&mut scenario, phi);
        let options = EvalOptions {
            record_trace: false,
            ..plan.options.clone()
        };
        let label = RunLabel {
            seed,
            load,
            replication: rep,
        };
        let eval = evaluate(&scenario, &options, label)?;
        let props = oracle::property_report(&eval.drp.allocation, &eval.drp.bids, &scenario)?;
        let by_price = booked_by_price(&eval.drp);
        let bottlenecked = eval
            .allocations
            .iter()
            .map(|(&m, a)| {
                let booked = match m {
                    Mechanism::Drp => by_price.clone(),
                    _ => booked_by_load(a, &scenario),
                };
                (m, paths_in_use_bottlenecked(a, &scenario, &booked))
            })
            .collect();
        runs.push(RunSummary {
            replication: rep,
            seed,
            load,
            phi,
            threshold: generated.threshold,
            converged: eval.converged(),
            iterations: eval.drp.report.iterations,
            kkt_residual: eval.drp.report.kkt_residual.unwrap_or(f64::NAN),
            bottlenecked,
            envy_free: props.envy_free,
            sharing_incentive: props.sharing_incentive,
        });
        records.extend(eval.records);
    }
    Ok((records, runs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayComparison {
    /// Mean of `D_B / D_A` over compared (slice, area) pairs.
    pub mean_ratio: f64,
    pub compared: usize,
    /// Pairs skipped because neither mechanism had spare capacity.
    pub excluded: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayTerm {
    /// Queuing part only, `L/(x - rho)`.
    Queuing,
    /// Queuing plus per-step processing, `L/(x - rho) + hL/x`.
    EndToEnd,
}

/// Delay improvement of mechanism A over B. For every (slice, area) the
/// offered load is 95% of the smaller of the two capacities.
pub fn delay_comparison(
    a: &[MetricsRecord],
    b: &[MetricsRecord],
    term: DelayTerm,
) -> Result<DelayComparison> {
    let key = |r: &MetricsRecord| (r.replication, r.load.to_string(), r.slice, r.area);
    let b_map: BTreeMap<_, &MetricsRecord> = b.iter().map(|r| (key(r), r)).collect();
    let mut sum = 0.0;
    let mut compared = 0;
    let mut excluded = 0;
    for ra in a {
        let rb = b_map
            .get(&key(ra))
            .ok_or_else(|| Error::InvalidConfig("delay comparison needs paired records".into()))?;
        let rho = 0.95 * ra.x.min(rb.x);
        let params = |r: &MetricsRecord| match term {
            DelayTerm::Queuing => DelayParams {
                steps: 0.0,
                ..r.delay
            },
            DelayTerm::EndToEnd => r.delay,
        };
        let da = delay_at_load(&params(ra), rho, ra.x);
        let db = delay_at_load(&params(rb), rho, rb.x);
        match (da.value(), db.value()) {
            (Some(da), Some(db)) => {
                sum += db / da;
                compared += 1;
            }
            _ => excluded += 1,
        }
    }
    Ok(DelayComparison {
        mean_ratio: if compared > 0 { sum / compared as f64 } else { f64::NAN },
        compared,
        excluded,
    })
}

pub const CSV_HEADER: [&str; 11] = [
    "mechanism",
    "seed",
    "load",
    "slice",
    "area",
    "x",
    "r_n",
    "welfare",
    "iterations",
    "kkt_residual",
    "opex_per_unit",
];

/// Writes the metrics table. Utilization columns follow the fixed columns in
/// the order of the first record (header-only when empty).
pub fn emit_csv(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io)?;
    let mut w = csv::Writer::from_writer(file);
    let util_cols: Vec<String> = records
        .first()
        .map(|r| {
            r.utilization
                .iter()
                .map(|(d, l, _)| format!("util_{}_{}", d.label(), l))
                .collect()
        })
        .unwrap_or_default();
    let mut header: Vec<String> = CSV_HEADER.iter().map(|s| s.to_string()).collect();
    header.extend(util_cols);
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.mechanism.label().to_string(),
            r.seed.to_string(),
            r.load.to_string(),
            r.slice.to_string(),
            r.area.to_string(),
            fmt_num(r.x),
            fmt_num(r.r),
            fmt_num(r.welfare),
            r.iterations.map(|v| v.to_string()).unwrap_or_default(),
            r.kkt_residual.map(fmt_num).unwrap_or_default(),
            fmt_num(r.opex_per_unit),
        ];
        row.extend(r.utilization.iter().map(|(_, _, v)| fmt_num(*v)));
        w.write_record(&row)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

/// Auction settings and load label stored alongside a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileConfig {
    pub epsilon: f64,
    pub step: f64,
    pub zeta: f64,
    pub load: Load,
}

impl Default for FileConfig {
    fn default() -> Self {
        let d = DrpConfig::default();
        FileConfig {
            epsilon: d.epsilon,
            step: d.step,
            zeta: d.zeta,
            load: Load::High,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub topology: Topology,
    pub slices: Vec<SliceSpec>,
    pub config: FileConfig,
}

impl ScenarioFile {
    pub fn new(scenario: Scenario, config: FileConfig) -> Self {
        ScenarioFile {
            topology: scenario.topology,
            slices: scenario.slices,
            config,
        }
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            topology: self.topology.clone(),
            slices: self.slices.clone(),
        }
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|source| Error::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        file.scenario().validate()?;
        Ok(file)
    }

    pub fn to_text(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        ScenarioFile::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
