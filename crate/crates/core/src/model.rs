//! Network and slice data model: nodes with per-resource capacities and OPEX,
//! pre-defined RAN -> CRAN -> CN paths grouped by area, slices with per-path
//! demand vectors, and the bookkeeping that turns path traffic into per-area
//! volumes and per-node resource allocations.
//!
//! Traffic is measured in Gb/s, currency in cents. Node, path and slice ids
//! are dense indices: the `id` of the k-th entry must be `k`.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::drp::PriceTable;
use crate::error::{structural, Error, Result};
use crate::utility::{DelayParams, UtilityParams};

/// Relative slack applied to capacities when judging feasibility.
pub const FEASIBILITY_TOL: f64 = 1e-9;

macro_rules! index_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub usize);

        impl $name {
            pub fn index(self) -> usize {
                self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

index_newtype!(NodeId);
index_newtype!(PathId);
index_newtype!(SliceId);
index_newtype!(
    /// Geographical area from which a set of paths originates.
    AreaId
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Domain {
    Ran = 1,
    Cran = 2,
    Cn = 3,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Ran, Domain::Cran, Domain::Cn];

    pub fn label(self) -> &'static str {
        match self {
            Domain::Ran => "ran",
            Domain::Cran => "cran",
            Domain::Cn => "cn",
        }
    }
}

impl TryFrom<u8> for Domain {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Domain::Ran),
            2 => Ok(Domain::Cran),
            3 => Ok(Domain::Cn),
            other => Err(format!("unknown domain index {other} (expected 1, 2 or 3)")),
        }
    }
}

impl From<Domain> for u8 {
    fn from(d: Domain) -> u8 {
        d as u8
    }
}

/// Per-resource quantities of one node, laid out in the node's own slot order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResourceVector(pub Vec<f64>);

impl ResourceVector {
    pub fn zeros(len: usize) -> Self {
        ResourceVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.0.iter()
    }

    /// `self += scale * other`, slot by slot.
    pub fn add_scaled(&mut self, scale: f64, other: &[f64]) {
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += scale * b;
        }
    }
}

impl From<Vec<f64>> for ResourceVector {
    fn from(v: Vec<f64>) -> Self {
        ResourceVector(v)
    }
}

/// Resources consumed per Gb/s of a slice's traffic at one node of one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DemandVector(pub Vec<f64>);

impl DemandVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<f64>> for DemandVector {
    fn from(v: Vec<f64>) -> Self {
        DemandVector(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub domain: Domain,
    /// Slot labels, e.g. `"cpu_cores"`; one per capacity entry.
    pub resources: Vec<String>,
    pub capacity: ResourceVector,
    /// Cost per provisioned resource unit (cents).
    pub opex: ResourceVector,
}

impl NodeSpec {
    pub fn resource_count(&self) -> usize {
        self.capacity.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub id: PathId,
    pub area: AreaId,
    /// One node per domain, ordered RAN -> CRAN -> CN.
    pub nodes: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub areas: usize,
    pub nodes: Vec<NodeSpec>,
    pub paths: Vec<PathSpec>,
}

impl Topology {
    pub fn node(&self, id: NodeId) -> Result<&NodeSpec> {
        self.nodes
            .get(id.0)
            .ok_or_else(|| structural(format!("unknown node {id}")))
    }

    pub fn path(&self, id: PathId) -> Result<&PathSpec> {
        self.paths
            .get(id.0)
            .ok_or_else(|| structural(format!("unknown path {id}")))
    }

    pub fn paths_in_area(&self, area: AreaId) -> impl Iterator<Item = &PathSpec> + '_ {
        self.paths.iter().filter(move |p| p.area == area)
    }

    pub fn nodes_in_domain(&self, domain: Domain) -> impl Iterator<Item = &NodeSpec> + '_ {
        self.nodes.iter().filter(move |n| n.domain == domain)
    }

    pub fn validate(&self) -> Result<()> {
        for (k, node) in self.nodes.iter().enumerate() {
            if node.id.0 != k {
                return Err(structural(format!("node at position {k} has id {}", node.id)));
            }
            let m = node.capacity.len();
            if node.opex.len() != m || node.resources.len() != m {
                return Err(structural(format!(
                    "node {k}: capacity, opex and resource labels must have equal length"
                )));
            }
            if node.capacity.iter().chain(node.opex.iter()).any(|v| !(*v >= 0.0)) {
                return Err(structural(format!("node {k}: negative capacity or opex")));
            }
        }
        for (k, path) in self.paths.iter().enumerate() {
            if path.id.0 != k {
                return Err(structural(format!("path at position {k} has id {}", path.id)));
            }
            if path.area.0 >= self.areas {
                return Err(structural(format!("path {k}: unknown area {}", path.area)));
            }
            let domains = path
                .nodes
                .iter()
                .map(|&n| self.node(n).map(|s| s.domain))
                .collect::<Result<Vec<_>>>()?;
            if domains != Domain::ALL {
                return Err(structural(format!(
                    "path {k}: expected exactly one node per domain ordered RAN, CRAN, CN"
                )));
            }
        }
        for area in 0..self.areas {
            if self.paths_in_area(AreaId(area)).next().is_none() {
                return Err(structural(format!("area {area} has no path")));
            }
        }
        Ok(())
    }
}

/// The parameters a slice carries in one area it is active in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceArea {
    pub area: AreaId,
    pub utility: UtilityParams,
    /// Budget per area (cents).
    pub budget: f64,
    pub delay: DelayParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandEntry {
    pub path: PathId,
    pub node: NodeId,
    pub demand: DemandVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub id: SliceId,
    /// Areas the slice is active in, sorted by area id.
    pub areas: Vec<SliceArea>,
    pub demands: Vec<DemandEntry>,
}

impl SliceSpec {
    pub fn area(&self, area: AreaId) -> Option<&SliceArea> {
        self.areas.iter().find(|a| a.area == area)
    }

    pub fn area_mut(&mut self, area: AreaId) -> Option<&mut SliceArea> {
        self.areas.iter_mut().find(|a| a.area == area)
    }

    pub fn demand(&self, path: PathId, node: NodeId) -> Option<&DemandVector> {
        self.demands
            .iter()
            .find(|e| e.path == path && e.node == node)
            .map(|e| &e.demand)
    }

    /// Demand lookup that reports a structural error when absent.
    pub fn require_demand(&self, path: PathId, node: NodeId) -> Result<&DemandVector> {
        self.demand(path, node).ok_or_else(|| {
            structural(format!(
                "slice {}: no demand vector for path {path} at node {node}",
                self.id
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub topology: Topology,
    pub slices: Vec<SliceSpec>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let topo = &self.topology;
        topo.validate()?;
        for (k, slice) in self.slices.iter().enumerate() {
            if slice.id.0 != k {
                return Err(structural(format!("slice at position {k} has id {}", slice.id)));
            }
            for w in slice.areas.windows(2) {
                if w[0].area >= w[1].area {
                    return Err(structural(format!("slice {k}: areas must be sorted and unique")));
                }
            }
            for sa in &slice.areas {
                if sa.area.0 >= topo.areas {
                    return Err(structural(format!("slice {k}: unknown area {}", sa.area)));
                }
                sa.utility.validate()?;
                sa.delay.validate()?;
                if !(sa.budget >= 0.0) {
                    return Err(Error::Domain(format!("slice {k}: negative budget")));
                }
                for path in topo.paths_in_area(sa.area) {
                    for &node_id in &path.nodes {
                        let node = topo.node(node_id)?;
                        let d = slice.require_demand(path.id, node_id)?;
                        if d.len() != node.resource_count() {
                            return Err(structural(format!(
                                "slice {k}: demand at path {} node {node_id} has {} slots, node has {}",
                                path.id,
                                d.len(),
                                node.resource_count()
                            )));
                        }
                        if d.0.iter().any(|v| !(*v >= 0.0)) || !d.0.iter().any(|v| *v > 0.0) {
                            return Err(structural(format!(
                                "slice {k}: demand at path {} node {node_id} must be non-negative with a positive entry",
                                path.id
                            )));
                        }
                        for (r, &dr) in d.0.iter().enumerate() {
                            if dr > 0.0 && !(node.capacity.0[r] > 0.0) {
                                return Err(structural(format!(
                                    "node {node_id}: resource {r} is demanded but has zero capacity"
                                )));
                            }
                            if dr > 0.0 && !(node.opex.0[r] > 0.0) {
                                return Err(structural(format!(
                                    "node {node_id}: resource {r} is demanded but has zero opex"
                                )));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Per-path traffic map keyed by (slice, path).
pub type PathTraffic = BTreeMap<(SliceId, PathId), f64>;

/// Traffic aggregated per (slice, area).
pub fn aggregate_area_traffic(
    x_path: &PathTraffic,
    topology: &Topology,
) -> Result<BTreeMap<(SliceId, AreaId), f64>> {
    let mut out = BTreeMap::new();
    for (&(slice, path), &x) in x_path {
        let area = topology.path(path)?.area;
        *out.entry((slice, area)).or_insert(0.0) += x;
    }
    Ok(out)
}

/// Resources each slice draws from each node.
pub fn node_allocation(
    x_path: &PathTraffic,
    slices: &[SliceSpec],
    topology: &Topology,
) -> Result<BTreeMap<(SliceId, NodeId), ResourceVector>> {
    let mut out: BTreeMap<(SliceId, NodeId), ResourceVector> = BTreeMap::new();
    for (&(slice_id, path_id), &x) in x_path {
        let path = topology.path(path_id)?;
        let slice = slices
            .get(slice_id.0)
            .ok_or_else(|| structural(format!("unknown slice {slice_id}")))?;
        for &node_id in &path.nodes {
            let node = topology.node(node_id)?;
            let entry = out
                .entry((slice_id, node_id))
                .or_insert_with(|| ResourceVector::zeros(node.resource_count()));
            if x == 0.0 {
                continue;
            }
            let d = slice.require_demand(path_id, node_id)?;
            entry.add_scaled(x, d.as_slice());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub node: NodeId,
    pub resource: usize,
    /// Total allocation minus capacity.
    pub overload: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feasibility {
    pub feasible: bool,
    pub violations: Vec<Violation>,
}

pub fn check_feasibility(
    x_path: &PathTraffic,
    slices: &[SliceSpec],
    topology: &Topology,
) -> Result<Feasibility> {
    let alloc = node_allocation(x_path, slices, topology)?;
    let mut totals: Vec<ResourceVector> = topology
        .nodes
        .iter()
        .map(|n| ResourceVector::zeros(n.resource_count()))
        .collect();
    for ((_, node), a) in &alloc {
        totals[node.0].add_scaled(1.0, a.as_slice());
    }
    let mut violations = Vec::new();
    for (node, total) in topology.nodes.iter().zip(&totals) {
        for (r, (&used, &cap)) in total.iter().zip(node.capacity.iter()).enumerate() {
            if used > cap * (1.0 + FEASIBILITY_TOL) {
                violations.push(Violation {
                    node: node.id,
                    resource: r,
                    overload: used - cap,
                });
            }
        }
    }
    Ok(Feasibility {
        feasible: violations.is_empty(),
        violations,
    })
}

/// Cost of carrying one Gb/s of the slice's traffic over `path` at `prices`.
pub fn path_unit_cost(
    topology: &Topology,
    path: PathId,
    slice: &SliceSpec,
    prices: &PriceTable,
) -> Result<f64> {
    let path = topology.path(path)?;
    let mut cost = 0.0;
    for &node in &path.nodes {
        let d = slice.require_demand(path.id, node)?;
        let mu = prices
            .mu
            .get(node.0)
            .ok_or_else(|| structural(format!("no prices for node {node}")))?;
        if mu.len() != d.len() {
            return Err(structural(format!("price/demand length mismatch at node {node}")));
        }
        cost += d.0.iter().zip(mu.iter()).map(|(d, m)| d * m).sum::<f64>();
    }
    Ok(cost)
}

/// Utilization pattern a VM provisioned in proportion to `estimate` shows when
/// its true per-unit demand is `truth`: the binding resource reads 1.
pub fn vm_utilization(estimate: &DemandVector, truth: &DemandVector) -> Result<Vec<f64>> {
    if estimate.len() != truth.len() {
        return Err(structural("estimate and true demand lengths differ"));
    }
    let scale = estimate
        .0
        .iter()
        .zip(&truth.0)
        .filter(|(_, &d)| d > 0.0)
        .map(|(&e, &d)| e / d)
        .fold(f64::INFINITY, f64::min);
    if !scale.is_finite() {
        return Err(Error::UndefinedDemand);
    }
    Ok(estimate
        .0
        .iter()
        .zip(&truth.0)
        .map(|(&e, &d)| if d > 0.0 { d / e * scale } else { 0.0 })
        .collect())
}

/// Recover a demand vector from an initial estimate and the observed VM
/// utilization. The result is scaled so that `min_r(estimate_r / d_r) = 1`.
pub fn infer_demand_vector(estimate: &DemandVector, utilization: &[f64]) -> Result<DemandVector> {
    if estimate.len() != utilization.len() {
        return Err(structural("estimate and utilization lengths differ"));
    }
    let peak = utilization.iter().copied().fold(0.0_f64, f64::max);
    if !(peak > 0.0) {
        return Err(Error::UndefinedDemand);
    }
    let mut d = Vec::with_capacity(estimate.len());
    for (&e, &u) in estimate.0.iter().zip(utilization) {
        if u < 0.0 {
            return Err(Error::Domain("negative utilization".into()));
        }
        if u > 0.0 && !(e > 0.0) {
            return Err(Error::Domain(
                "estimate must be positive wherever utilization is positive".into(),
            ));
        }
        d.push(e * u / peak);
    }
    Ok(DemandVector(d))
}

/// Path traffic together with its derived per-area volumes and per-node
/// allocations. Derived maps are kept consistent on every update.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationState {
    x_path: PathTraffic,
    x_area: BTreeMap<(SliceId, AreaId), f64>,
    node_alloc: BTreeMap<(SliceId, NodeId), ResourceVector>,
}

impl AllocationState {
    pub fn from_paths(x_path: PathTraffic, scenario: &Scenario) -> Result<Self> {
        if let Some((&k, &v)) = x_path.iter().find(|(_, &v)| !(v >= 0.0)) {
            return Err(Error::Domain(format!(
                "negative traffic {v} for slice {} on path {}",
                k.0, k.1
            )));
        }
        let x_area = aggregate_area_traffic(&x_path, &scenario.topology)?;
        let node_alloc = node_allocation(&x_path, &scenario.slices, &scenario.topology)?;
        Ok(AllocationState {
            x_path,
            x_area,
            node_alloc,
        })
    }

    pub fn empty() -> Self {
        AllocationState {
            x_path: BTreeMap::new(),
            x_area: BTreeMap::new(),
            node_alloc: BTreeMap::new(),
        }
    }

    pub fn x_path(&self) -> &PathTraffic {
        &self.x_path
    }

    pub fn x_area(&self) -> &BTreeMap<(SliceId, AreaId), f64> {
        &self.x_area
    }

    pub fn node_alloc(&self) -> &BTreeMap<(SliceId, NodeId), ResourceVector> {
        &self.node_alloc
    }

    pub fn path_traffic(&self, slice: SliceId, path: PathId) -> f64 {
        self.x_path.get(&(slice, path)).copied().unwrap_or(0.0)
    }

    pub fn area_traffic(&self, slice: SliceId, area: AreaId) -> f64 {
        self.x_area.get(&(slice, area)).copied().unwrap_or(0.0)
    }

    /// Sum of all per-area volumes.
    pub fn total_traffic(&self) -> f64 {
        self.x_area.values().sum()
    }

    /// Update one path's traffic and refresh only the derived entries it
    /// touches. Each touched entry is re-summed in key order, so the result
    /// is identical to rebuilding the state from scratch.
    pub fn set_path_traffic(
        &mut self,
        slice: SliceId,
        path: PathId,
        x: f64,
        scenario: &Scenario,
    ) -> Result<()> {
        if !(x >= 0.0) {
            return Err(Error::Domain(format!("negative traffic {x}")));
        }
        let topo = &scenario.topology;
        let spec = topo.path(path)?;
        let slice_spec = scenario
            .slices
            .get(slice.0)
            .ok_or_else(|| structural(format!("unknown slice {slice}")))?;
        for &node in &spec.nodes {
            if x != 0.0 {
                slice_spec.require_demand(path, node)?;
            }
        }
        self.x_path.insert((slice, path), x);

        let area_sum = self
            .x_path
            .range((slice, PathId(0))..=(slice, PathId(usize::MAX)))
            .filter(|((_, p), _)| topo.paths[p.0].area == spec.area)
            .map(|(_, v)| *v)
            .sum::<f64>();
        self.x_area.insert((slice, spec.area), area_sum);

        for &node in &spec.nodes {
            let mut acc = ResourceVector::zeros(topo.nodes[node.0].resource_count());
            for (&(_, p), &v) in self
                .x_path
                .range((slice, PathId(0))..=(slice, PathId(usize::MAX)))
            {
                if !topo.paths[p.0].nodes.contains(&node) || v == 0.0 {
                    continue;
                }
                acc.add_scaled(v, slice_spec.require_demand(p, node)?.as_slice());
            }
            self.node_alloc.insert((slice, node), acc);
        }
        Ok(())
    }
}

/// One resource slot of one node, using the stacked indexing of [`Market`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResourceSlot {
    pub node: NodeId,
    pub resource: usize,
}

/// One (slice, path) pairing the slice may route over.
#[derive(Debug, Clone)]
pub struct Route {
    pub slice: SliceId,
    pub path: PathId,
    /// Index into [`Market::groups`].
    pub group: usize,
    /// Non-zero demand entries as (stacked resource index, per-unit demand).
    pub usage: Vec<(usize, f64)>,
    /// Per-node demand for each node on the path, in path order.
    pub legs: Vec<(NodeId, Vec<f64>)>,
}

/// All routes of one slice within one area.
#[derive(Debug, Clone)]
pub struct Group {
    pub slice: SliceId,
    pub area: AreaId,
    pub params: SliceArea,
    pub routes: Range<usize>,
}

/// Dense, index-based view of a validated scenario used by the numerical code.
/// Resources of all nodes are stacked into one index space.
#[derive(Debug, Clone)]
pub struct Market {
    pub routes: Vec<Route>,
    pub groups: Vec<Group>,
    /// Range of groups belonging to each slice.
    pub slice_groups: Vec<Range<usize>>,
    pub slots: Vec<ResourceSlot>,
    pub node_offset: Vec<usize>,
    pub capacity: Vec<f64>,
    pub opex: Vec<f64>,
}

impl Market {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let topo = &scenario.topology;
        let mut node_offset = Vec::with_capacity(topo.nodes.len());
        let mut slots = Vec::new();
        let mut capacity = Vec::new();
        let mut opex = Vec::new();
        for node in &topo.nodes {
            node_offset.push(slots.len());
            for r in 0..node.resource_count() {
                slots.push(ResourceSlot {
                    node: node.id,
                    resource: r,
                });
                capacity.push(node.capacity.0[r]);
                opex.push(node.opex.0[r]);
            }
        }
        let mut routes = Vec::new();
        let mut groups = Vec::new();
        let mut slice_groups = Vec::with_capacity(scenario.slices.len());
        for slice in &scenario.slices {
            let g0 = groups.len();
            for sa in &slice.areas {
                let r0 = routes.len();
                for path in topo.paths_in_area(sa.area) {
                    let mut usage = Vec::new();
                    let mut legs = Vec::with_capacity(path.nodes.len());
                    for &node in &path.nodes {
                        let d = slice.require_demand(path.id, node)?;
                        for (r, &dr) in d.0.iter().enumerate() {
                            if dr > 0.0 {
                                usage.push((node_offset[node.0] + r, dr));
                            }
                        }
                        legs.push((node, d.0.clone()));
                    }
                    routes.push(Route {
                        slice: slice.id,
                        path: path.id,
                        group: groups.len(),
                        usage,
                        legs,
                    });
                }
                groups.push(Group {
                    slice: slice.id,
                    area: sa.area,
                    params: sa.clone(),
                    routes: r0..routes.len(),
                });
            }
            slice_groups.push(g0..groups.len());
        }
        Ok(Market {
            routes,
            groups,
            slice_groups,
            slots,
            node_offset,
            capacity,
            opex,
        })
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn slot_index(&self, node: NodeId, resource: usize) -> usize {
        self.node_offset[node.0] + resource
    }

    /// Stacked per-resource load of a route-indexed traffic vector.
    pub fn load(&self, x: &[f64]) -> Vec<f64> {
        let mut load = vec![0.0; self.slot_count()];
        for (route, &xv) in self.routes.iter().zip(x) {
            if xv == 0.0 {
                continue;
            }
            for &(k, d) in &route.usage {
                load[k] += xv * d;
            }
        }
        load
    }

    /// Per-unit cost of each route at stacked prices.
    pub fn route_costs(&self, prices: &[f64]) -> Vec<f64> {
        self.routes
            .iter()
            .map(|r| r.usage.iter().map(|&(k, d)| d * prices[k]).sum())
            .collect()
    }

    /// Per-group (slice, area) volumes.
    pub fn group_totals(&self, x: &[f64]) -> Vec<f64> {
        self.groups
            .iter()
            .map(|g| x[g.routes.clone()].iter().sum())
            .collect()
    }

    /// Route-indexed traffic from a path map (missing entries are zero).
    pub fn route_vector(&self, state: &AllocationState) -> Vec<f64> {
        self.routes
            .iter()
            .map(|r| state.path_traffic(r.slice, r.path))
            .collect()
    }

    pub fn path_traffic(&self, x: &[f64]) -> PathTraffic {
        self.routes
            .iter()
            .zip(x)
            .map(|(r, &v)| ((r.slice, r.path), v))
            .collect()
    }

    pub fn allocation(&self, x: &[f64], scenario: &Scenario) -> Result<AllocationState> {
        AllocationState::from_paths(self.path_traffic(x), scenario)
    }

    /// Split a stacked vector back into per-node resource vectors.
    pub fn per_node(&self, stacked: &[f64]) -> Vec<ResourceVector> {
        let n = self.node_offset.len();
        (0..n)
            .map(|i| {
                let end = if i + 1 < n {
                    self.node_offset[i + 1]
                } else {
                    stacked.len()
                };
                ResourceVector(stacked[self.node_offset[i]..end].to_vec())
            })
            .collect()
    }

    pub fn stack(&self, per_node: &[ResourceVector]) -> Vec<f64> {
        per_node.iter().flat_map(|v| v.0.iter().copied()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::utility::{DelayParams, UtilityParams};

    fn example_node(id: usize, domain: Domain, cap: Vec<f64>) -> NodeSpec {
        let m = cap.len();
        NodeSpec {
            id: NodeId(id),
            domain,
            resources: (0..m).map(|r| format!("r{r}")).collect(),
            capacity: ResourceVector(cap),
            opex: ResourceVector(vec![1.0; m]),
        }
    }

    /// One path through the reference example server, plus
    /// roomy CRAN/CN nodes.
    fn server_scenario(second_path: bool) -> Scenario {
        let nodes = vec![
            example_node(0, Domain::Ran, vec![16.0, 32.0, 1.0, 10.0, 2.5, 2.5, 2.5, 2.5]),
            example_node(1, Domain::Cran, vec![100.0]),
            example_node(2, Domain::Cn, vec![100.0]),
        ];
        let mut paths = vec![PathSpec {
            id: PathId(0),
            area: AreaId(0),
            nodes: vec![NodeId(0), NodeId(1), NodeId(2)],
        }];
        if second_path {
            paths.push(PathSpec {
                id: PathId(1),
                area: AreaId(0),
                nodes: vec![NodeId(0), NodeId(1), NodeId(2)],
            });
        }
        let d = vec![0.5, 2.0, 0.1, 0.75, 1.1, 0.0, 0.0, 0.0];
        let d2 = vec![0.25, 1.0, 0.1, 0.5, 0.0, 1.0, 0.0, 0.0];
        let mut demands = Vec::new();
        for (p, dv) in [(0usize, d), (1, d2)].into_iter().take(paths.len()) {
            demands.push(DemandEntry {
                path: PathId(p),
                node: NodeId(0),
                demand: DemandVector(dv),
            });
            for n in [1, 2] {
                demands.push(DemandEntry {
                    path: PathId(p),
                    node: NodeId(n),
                    demand: DemandVector(vec![1.0]),
                });
            }
        }
        Scenario {
            topology: Topology {
                areas: 1,
                nodes,
                paths,
            },
            slices: vec![SliceSpec {
                id: SliceId(0),
                areas: vec![SliceArea {
                    area: AreaId(0),
                    utility: UtilityParams { phi: 10.0, alpha: 1.0 },
                    budget: 100.0,
                    delay: DelayParams::default(),
                }],
                demands,
            }],
        }
    }

    fn single(x: f64) -> PathTraffic {
        BTreeMap::from([((SliceId(0), PathId(0)), x)])
    }

    #[test]
    fn area_traffic_sums_paths() {
        let s = server_scenario(true);
        let x = BTreeMap::from([
            ((SliceId(0), PathId(0)), 3.0),
            ((SliceId(0), PathId(1)), 5.0),
        ]);
        let agg = aggregate_area_traffic(&x, &s.topology).unwrap();
        assert_eq!(agg[&(SliceId(0), AreaId(0))], 8.0);

        let zero = BTreeMap::from([
            ((SliceId(0), PathId(0)), 0.0),
            ((SliceId(0), PathId(1)), 0.0),
        ]);
        let agg = aggregate_area_traffic(&zero, &s.topology).unwrap();
        assert_eq!(agg[&(SliceId(0), AreaId(0))], 0.0);

        let one = server_scenario(false);
        let agg = aggregate_area_traffic(&single(4.5), &one.topology).unwrap();
        assert_eq!(agg[&(SliceId(0), AreaId(0))], 4.5);
    }

    #[test]
    fn unknown_path_is_structural() {
        let s = server_scenario(false);
        let x = BTreeMap::from([((SliceId(0), PathId(7)), 1.0)]);
        assert!(matches!(
            aggregate_area_traffic(&x, &s.topology),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn node_allocation_of_example_server() {
        let s = server_scenario(false);
        let a = node_allocation(&single(1.0), &s.slices, &s.topology).unwrap();
        assert_eq!(
            a[&(SliceId(0), NodeId(0))].0,
            vec![0.5, 2.0, 0.1, 0.75, 1.1, 0.0, 0.0, 0.0]
        );
        let a = node_allocation(&single(2.0), &s.slices, &s.topology).unwrap();
        assert_eq!(
            a[&(SliceId(0), NodeId(0))].0,
            vec![1.0, 4.0, 0.2, 1.5, 2.2, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn node_allocation_is_additive_over_paths() {
        let s = server_scenario(true);
        let x = BTreeMap::from([
            ((SliceId(0), PathId(0)), 1.0),
            ((SliceId(0), PathId(1)), 1.0),
        ]);
        let a = node_allocation(&x, &s.slices, &s.topology).unwrap();
        assert_eq!(
            a[&(SliceId(0), NodeId(0))].0,
            vec![0.75, 3.0, 0.2, 1.25, 1.1, 1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn missing_demand_is_structural() {
        let mut s = server_scenario(false);
        s.slices[0].demands.retain(|e| e.node != NodeId(1));
        assert!(matches!(
            node_allocation(&single(1.0), &s.slices, &s.topology),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn feasibility_on_example_server() {
        let s = server_scenario(false);
        let f = check_feasibility(&single(2.0), &s.slices, &s.topology).unwrap();
        assert!(f.feasible);

        let f = check_feasibility(&single(3.0), &s.slices, &s.topology).unwrap();
        assert!(!f.feasible);
        assert_eq!(f.violations.len(), 1);
        let v = &f.violations[0];
        assert_eq!((v.node, v.resource), (NodeId(0), 4));
        assert!((v.overload - (3.3 - 2.5)).abs() < 1e-12);

        let f = check_feasibility(&BTreeMap::new(), &s.slices, &s.topology).unwrap();
        assert!(f.feasible);
    }

    fn prices(mu: Vec<Vec<f64>>) -> PriceTable {
        let eta = mu.iter().map(|v| ResourceVector::zeros(v.len())).collect();
        PriceTable {
            mu: mu.into_iter().map(ResourceVector).collect(),
            eta,
        }
    }

    #[test]
    fn unit_cost_sums_price_weighted_demand() {
        let mut s = server_scenario(false);
        // Reduce the RAN demand to a single unit slot for the arithmetic cases.
        s.topology.nodes[0] = example_node(0, Domain::Ran, vec![10.0]);
        for e in &mut s.slices[0].demands {
            e.demand = DemandVector(vec![1.0]);
        }
        let p = prices(vec![vec![2.0], vec![0.0], vec![0.0]]);
        assert_eq!(path_unit_cost(&s.topology, PathId(0), &s.slices[0], &p).unwrap(), 2.0);

        s.topology.nodes[1] = example_node(1, Domain::Cran, vec![10.0, 10.0]);
        s.topology.nodes[0] = example_node(0, Domain::Ran, vec![10.0, 10.0]);
        for e in &mut s.slices[0].demands {
            if e.node != NodeId(2) {
                e.demand = DemandVector(vec![1.0, 1.0]);
            }
        }
        let p = prices(vec![vec![1.0, 1.0], vec![2.0, 3.0], vec![0.0]]);
        assert_eq!(path_unit_cost(&s.topology, PathId(0), &s.slices[0], &p).unwrap(), 7.0);

        let p = prices(vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![0.0]]);
        assert_eq!(path_unit_cost(&s.topology, PathId(0), &s.slices[0], &p).unwrap(), 0.0);

        let p = prices(vec![vec![1.0, 1.0]]);
        assert!(path_unit_cost(&s.topology, PathId(0), &s.slices[0], &p).is_err());
    }

    #[test]
    fn demand_inference_inverts_utilization() {
        let est = DemandVector(vec![1.0, 1.0]);
        let truth = DemandVector(vec![1.0, 2.0]);
        let u = vm_utilization(&est, &truth).unwrap();
        assert_eq!(u, vec![0.5, 1.0]);
        let d = infer_demand_vector(&est, &u).unwrap();
        assert_eq!(d.0, vec![0.5, 1.0]);
        // Same direction as the true demand.
        assert!((d.0[1] / d.0[0] - truth.0[1] / truth.0[0]).abs() < 1e-15);

        // An exact estimate reads full utilization on the tight resource.
        let u = vm_utilization(&truth, &truth).unwrap();
        assert_eq!(u, vec![1.0, 1.0]);
        assert_eq!(infer_demand_vector(&truth, &u).unwrap(), truth);

        // Scaling the estimate does not change the inferred direction.
        let scaled = DemandVector(vec![3.0, 3.0]);
        let d2 = infer_demand_vector(&scaled, &vm_utilization(&scaled, &truth).unwrap()).unwrap();
        assert!((d2.0[1] / d2.0[0] - 2.0).abs() < 1e-12);

        assert!(matches!(
            infer_demand_vector(&est, &[0.0, 0.0]),
            Err(Error::UndefinedDemand)
        ));
        assert!(infer_demand_vector(&DemandVector(vec![0.0, 1.0]), &[0.5, 1.0]).is_err());
    }

    #[test]
    fn validation_rejects_zero_opex_on_demanded_resource() {
        let mut s = server_scenario(false);
        assert!(s.validate().is_ok());
        s.topology.nodes[0].opex.0[0] = 0.0;
        assert!(s.validate().is_err());
        // Zero OPEX on a slot nobody uses is fine.
        let mut s = server_scenario(false);
        s.topology.nodes[0].opex.0[7] = 0.0;
        assert!(s.validate().is_ok());
    }

    #[test]
    fn validation_rejects_bad_paths() {
        let mut s = server_scenario(false);
        s.topology.paths[0].nodes.swap(0, 1);
        assert!(s.validate().is_err());
        let mut s = server_scenario(false);
        s.topology.paths[0].nodes.pop();
        assert!(s.validate().is_err());
    }

    #[test]
    fn incremental_maintenance_matches_rebuild() {
        let s = server_scenario(true);
        let mut state = AllocationState::empty();
        let updates = [(0usize, 0.3), (1, 1.7), (0, 0.9), (1, 0.0), (1, 2.25)];
        for &(p, x) in &updates {
            state.set_path_traffic(SliceId(0), PathId(p), x, &s).unwrap();
            let rebuilt = AllocationState::from_paths(state.x_path().clone(), &s).unwrap();
            assert_eq!(state, rebuilt);
        }
    }
}
