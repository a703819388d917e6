//! Comparison allocators: the payment-proportional uniform split, and
//! dominant resource fairness applied end to end (multi-domain) or node by
//! node from the core outwards (per-domain).
//!
//! Both DRF variants route each (slice, area) over a single designated path.

use std::collections::BTreeMap;

use crate::error::{structural, Result};
use crate::model::{
    AllocationState, AreaId, Domain, NodeId, PathId, PathTraffic, ResourceVector, Scenario,
    SliceId, Topology,
};
use crate::utility::inverse_marginal;

/// Relative slack when comparing volumes with their uniform comparator.
pub const SHARING_SLACK: f64 = 1e-9;

const SATURATION_TOL: f64 = 1e-12;

/// Inputs of the uniform comparator.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformAllocationSpec {
    /// Fraction of each resource that is divided among the slices.
    pub eta: Vec<ResourceVector>,
    /// Weight per (slice, path, node).
    pub weights: BTreeMap<(SliceId, PathId, NodeId), f64>,
    /// Total weight at each node.
    pub node_totals: Vec<f64>,
}

impl UniformAllocationSpec {
    pub fn new(
        eta: Vec<ResourceVector>,
        weights: BTreeMap<(SliceId, PathId, NodeId), f64>,
        topology: &Topology,
    ) -> Self {
        let mut node_totals = vec![0.0; topology.nodes.len()];
        for (&(_, _, i), &w) in &weights {
            node_totals[i.0] += w;
        }
        UniformAllocationSpec {
            eta,
            weights,
            node_totals,
        }
    }

    /// Whole capacities split with weight one for each designated path.
    pub fn equal_weights(scenario: &Scenario, designated: &Designated) -> Self {
        let topo = &scenario.topology;
        let eta = topo
            .nodes
            .iter()
            .map(|n| ResourceVector(vec![1.0; n.resource_count()]))
            .collect();
        let mut weights = BTreeMap::new();
        for (&(n, _), &p) in designated {
            for &i in &topo.paths[p.0].nodes {
                weights.insert((n, p, i), 1.0);
            }
        }
        UniformAllocationSpec::new(eta, weights, topo)
    }
}

/// Volume each weighted (slice, path) could carry if every node split its
/// sold resources in proportion to weight.
pub fn uniform_allocation(scenario: &Scenario, spec: &UniformAllocationSpec) -> Result<AllocationState> {
    let topo = &scenario.topology;
    let mut per_path: BTreeMap<(SliceId, PathId), f64> = BTreeMap::new();
    for &(n, p, _) in spec.weights.keys() {
        per_path.entry((n, p)).or_insert(f64::INFINITY);
    }
    for (&(n, p), x) in per_path.iter_mut() {
        let slice = scenario
            .slices
            .get(n.0)
            .ok_or_else(|| structural(format!("unknown slice {n}")))?;
        let path = topo.path(p)?;
        for &i in &path.nodes {
            let w = spec.weights.get(&(n, p, i)).copied().unwrap_or(0.0);
            let total = spec.node_totals[i.0];
            if !(w > 0.0) || !(total > 0.0) {
                *x = 0.0;
                break;
            }
            let node = topo.node(i)?;
            let d = slice.require_demand(p, i)?;
            let gamma = d
                .0
                .iter()
                .enumerate()
                .filter(|(_, &dr)| dr > 0.0)
                .map(|(r, &dr)| spec.eta[i.0].0[r] * node.capacity.0[r] / dr)
                .fold(f64::INFINITY, f64::min);
            *x = x.min(w / total * gamma);
        }
        if !x.is_finite() {
            *x = 0.0;
        }
    }
    AllocationState::from_paths(per_path, scenario)
}

/// Designated path per (slice, area).
pub type Designated = BTreeMap<(SliceId, AreaId), PathId>;

/// For every (slice, area) the path with the largest standalone bottleneck
/// volume `min_i min_r C/d`; ties go to the lowest path id.
pub fn designated_paths(scenario: &Scenario) -> Result<Designated> {
    let topo = &scenario.topology;
    let mut out = Designated::new();
    for slice in &scenario.slices {
        for sa in &slice.areas {
            let mut best: Option<(f64, PathId)> = None;
            for path in topo.paths_in_area(sa.area) {
                let mut vol = f64::INFINITY;
                for &i in &path.nodes {
                    let node = topo.node(i)?;
                    let d = slice.require_demand(path.id, i)?;
                    for (r, &dr) in d.0.iter().enumerate() {
                        if dr > 0.0 {
                            vol = vol.min(node.capacity.0[r] / dr);
                        }
                    }
                }
                if best.map_or(true, |(b, _)| vol > b * (1.0 + SATURATION_TOL)) {
                    best = Some((vol, path.id));
                }
            }
            let (_, p) = best.ok_or_else(|| structural(format!("area {} has no path", sa.area)))?;
            out.insert((slice.id, sa.area), p);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrfSettings {
    /// Per-(slice, area) weights; `None` weighs every flow equally.
    pub weights: Option<BTreeMap<(SliceId, AreaId), f64>>,
    /// Stop each flow at the traffic its utility asks for at OPEX prices.
    pub satiation_cap: bool,
}

impl DrfSettings {
    /// Equal weights, no satiation cap.
    pub fn greedy() -> Self {
        DrfSettings {
            weights: None,
            satiation_cap: false,
        }
    }

    /// Payment weights with the satiation cap.
    pub fn weighted(payments: BTreeMap<(SliceId, AreaId), f64>) -> Self {
        DrfSettings {
            weights: Some(payments),
            satiation_cap: true,
        }
    }

    fn weight(&self, key: (SliceId, AreaId)) -> f64 {
        match &self.weights {
            None => 1.0,
            Some(w) => w.get(&key).copied().unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominantShareInfo {
    pub slice: SliceId,
    pub area: AreaId,
    /// Node whose scope the share was taken over (per-domain only).
    pub scope: Option<NodeId>,
    pub dominant: (NodeId, usize),
    /// `max d / C` over the scope.
    pub fraction: f64,
    pub weight: f64,
    /// Dominant share `x * fraction`.
    pub z: f64,
}

/// One flow of a progressive filling problem.
#[derive(Debug, Clone)]
pub struct FillFlow {
    /// Growth rate of the flow's volume per unit of the common share level.
    pub rate: f64,
    pub cap: f64,
    /// (resource index, consumption per unit volume).
    pub usage: Vec<(usize, f64)>,
}

/// Weighted progressive filling: every active flow grows at its rate until a
/// resource it uses saturates or it reaches its cap. Flows freeze together,
/// so the result does not depend on flow order.
pub fn progressive_fill(flows: &[FillFlow], capacity: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; flows.len()];
    let mut used = vec![0.0; capacity.len()];
    let mut active: Vec<bool> = flows
        .iter()
        .map(|f| f.rate > 0.0 && f.cap > 0.0)
        .collect();
    while active.iter().any(|&a| a) {
        let mut growth = vec![0.0; capacity.len()];
        for (f, flow) in flows.iter().enumerate() {
            if active[f] {
                for &(k, u) in &flow.usage {
                    growth[k] += flow.rate * u;
                }
            }
        }
        let mut dt = f64::INFINITY;
        for k in 0..capacity.len() {
            if growth[k] > 0.0 {
                dt = dt.min(((capacity[k] - used[k]) / growth[k]).max(0.0));
            }
        }
        for (f, flow) in flows.iter().enumerate() {
            if active[f] {
                dt = dt.min(((flow.cap - x[f]) / flow.rate).max(0.0));
            }
        }
        if !dt.is_finite() {
            // Flows without any limiting resource or cap.
            break;
        }
        for (f, flow) in flows.iter().enumerate() {
            if active[f] {
                x[f] = (x[f] + dt * flow.rate).min(flow.cap);
            }
        }
        for k in 0..capacity.len() {
            used[k] += dt * growth[k];
        }
        let saturated: Vec<bool> = (0..capacity.len())
            .map(|k| capacity[k] - used[k] <= SATURATION_TOL * capacity[k])
            .collect();
        for (f, flow) in flows.iter().enumerate() {
            if !active[f] {
                continue;
            }
            if x[f] >= flow.cap * (1.0 - SATURATION_TOL)
                || flow.usage.iter().any(|&(k, u)| u > 0.0 && saturated[k])
            {
                active[f] = false;
            }
        }
    }
    x
}

struct Flow {
    slice: SliceId,
    area: AreaId,
    path: PathId,
    weight: f64,
    cap: f64,
}

fn flows(scenario: &Scenario, settings: &DrfSettings, designated: &Designated) -> Result<Vec<Flow>> {
    let topo = &scenario.topology;
    let mut out = Vec::new();
    for (&(n, l), &p) in designated {
        let slice = scenario
            .slices
            .get(n.0)
            .ok_or_else(|| structural(format!("unknown slice {n}")))?;
        let sa = slice
            .area(l)
            .ok_or_else(|| structural(format!("slice {n} is not active in area {l}")))?;
        if topo.path(p)?.area != l {
            return Err(structural(format!("path {p} is not in area {l}")));
        }
        let cap = if settings.satiation_cap {
            let q = topo.paths[p.0]
                .nodes
                .iter()
                .map(|&i| {
                    let d = slice.require_demand(p, i)?;
                    Ok(d.0.iter().zip(topo.nodes[i.0].opex.iter()).map(|(a, b)| a * b).sum::<f64>())
                })
                .sum::<Result<f64>>()?;
            inverse_marginal(&sa.utility, q)?
        } else {
            f64::INFINITY
        };
        out.push(Flow {
            slice: n,
            area: l,
            path: p,
            weight: settings.weight((n, l)),
            cap,
        });
    }
    Ok(out)
}

/// Largest `d / C` among the scope's nodes, with its location.
fn dominant(
    scenario: &Scenario,
    flow: &Flow,
    nodes: &[NodeId],
) -> Result<(f64, (NodeId, usize))> {
    let slice = &scenario.slices[flow.slice.0];
    let mut best = (0.0, (nodes[0], 0));
    for &i in nodes {
        let node = scenario.topology.node(i)?;
        let d = slice.require_demand(flow.path, i)?;
        for (r, &dr) in d.0.iter().enumerate() {
            if dr > 0.0 {
                let f = dr / node.capacity.0[r];
                if f > best.0 {
                    best = (f, (i, r));
                }
            }
        }
    }
    Ok(best)
}

fn to_state(scenario: &Scenario, flows: &[Flow], x: &[f64]) -> Result<AllocationState> {
    let map: PathTraffic = flows.iter().zip(x).map(|(f, &v)| ((f.slice, f.path), v)).collect();
    AllocationState::from_paths(map, scenario)
}

/// Uses stacked indexing over every node's resources.
fn stacked(topology: &Topology) -> (Vec<usize>, Vec<f64>) {
    let mut offset = Vec::with_capacity(topology.nodes.len());
    let mut cap = Vec::new();
    for n in &topology.nodes {
        offset.push(cap.len());
        cap.extend(n.capacity.iter().copied());
    }
    (offset, cap)
}

fn usage_at(scenario: &Scenario, flow: &Flow, nodes: &[NodeId], offset: &[usize]) -> Result<Vec<(usize, f64)>> {
    let slice = &scenario.slices[flow.slice.0];
    let mut u = Vec::new();
    for &i in nodes {
        let d = slice.require_demand(flow.path, i)?;
        for (r, &dr) in d.0.iter().enumerate() {
            if dr > 0.0 {
                u.push((offset[i.0] + r, dr));
            }
        }
    }
    Ok(u)
}

/// DRF over whole paths: dominant shares are taken across every node a
/// flow traverses.
pub fn multi_domain_drf(
    scenario: &Scenario,
    settings: &DrfSettings,
    designated: &Designated,
) -> Result<AllocationState> {
    let fl = flows(scenario, settings, designated)?;
    let (offset, cap) = stacked(&scenario.topology);
    let mut fill = Vec::with_capacity(fl.len());
    for f in &fl {
        let nodes = &scenario.topology.paths[f.path.0].nodes;
        let (frac, _) = dominant(scenario, f, nodes)?;
        fill.push(FillFlow {
            rate: if f.weight > 0.0 { f.weight / frac } else { 0.0 },
            cap: f.cap,
            usage: usage_at(scenario, f, nodes, &offset)?,
        });
    }
    let x = progressive_fill(&fill, &cap);
    to_state(scenario, &fl, &x)
}

/// DRF node by node, core network first. A flow's volume at each node is
/// capped by what it was granted further towards the core.
pub fn per_domain_drf(
    scenario: &Scenario,
    settings: &DrfSettings,
    designated: &Designated,
) -> Result<AllocationState> {
    let topo = &scenario.topology;
    let fl = flows(scenario, settings, designated)?;
    let mut limit: Vec<f64> = fl.iter().map(|f| f.cap).collect();
    for domain in [Domain::Cn, Domain::Cran, Domain::Ran] {
        let mut next = limit.clone();
        for node in topo.nodes_in_domain(domain) {
            let members: Vec<usize> = (0..fl.len())
                .filter(|&f| topo.paths[fl[f].path.0].nodes.contains(&node.id))
                .collect();
            if members.is_empty() {
                continue;
            }
            let mut fill = Vec::with_capacity(members.len());
            // The node's own slots, indexed from zero.
            let offset = vec![0; topo.nodes.len()];
            for &f in &members {
                let (frac, _) = dominant(scenario, &fl[f], &[node.id])?;
                fill.push(FillFlow {
                    rate: if fl[f].weight > 0.0 { fl[f].weight / frac } else { 0.0 },
                    cap: limit[f],
                    usage: usage_at(scenario, &fl[f], &[node.id], &offset)?,
                });
            }
            let x = progressive_fill(&fill, node.capacity.as_slice());
            for (&f, v) in members.iter().zip(x) {
                next[f] = v;
            }
        }
        limit = next;
    }
    to_state(scenario, &fl, &limit)
}

/// Dominant shares of a multi-domain allocation, one row per flow.
pub fn md_dominant_shares(
    scenario: &Scenario,
    settings: &DrfSettings,
    designated: &Designated,
    allocation: &AllocationState,
) -> Result<Vec<DominantShareInfo>> {
    let fl = flows(scenario, settings, designated)?;
    fl.iter()
        .map(|f| {
            let (fraction, dominant) = dominant(scenario, f, &scenario.topology.paths[f.path.0].nodes)?;
            let x = allocation.path_traffic(f.slice, f.path);
            Ok(DominantShareInfo {
                slice: f.slice,
                area: f.area,
                scope: None,
                dominant,
                fraction,
                weight: f.weight,
                z: x * fraction,
            })
        })
        .collect()
}

/// Per-node dominant shares of an allocation, one row per (flow, node).
pub fn pd_dominant_shares(
    scenario: &Scenario,
    settings: &DrfSettings,
    designated: &Designated,
    allocation: &AllocationState,
) -> Result<Vec<DominantShareInfo>> {
    let fl = flows(scenario, settings, designated)?;
    let mut out = Vec::new();
    for f in &fl {
        let x = allocation.path_traffic(f.slice, f.path);
        for &i in &scenario.topology.paths[f.path.0].nodes {
            let (fraction, dominant) = dominant(scenario, f, &[i])?;
            out.push(DominantShareInfo {
                slice: f.slice,
                area: f.area,
                scope: Some(i),
                dominant,
                fraction,
                weight: f.weight,
                z: x * fraction,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shortfall {
    pub slice: SliceId,
    pub area: AreaId,
    /// `x / x_uniform`.
    pub ratio: f64,
}

/// (slice, area) volumes that fall below the uniform comparator's.
pub fn sharing_incentive_violation_scan(
    allocation: &AllocationState,
    uniform: &AllocationState,
) -> Vec<Shortfall> {
    uniform
        .x_area()
        .iter()
        .filter_map(|(&(n, l), &xu)| {
            let x = allocation.area_traffic(n, l);
            (xu > 0.0 && x < xu * (1.0 - SHARING_SLACK)).then(|| Shortfall {
                slice: n,
                area: l,
                ratio: x / xu,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{counter_example, node, path, unit_demand as build};

    fn volumes(s: &Scenario, a: &AllocationState) -> Vec<f64> {
        s.slices
            .iter()
            .map(|sl| sl.areas.iter().map(|sa| a.area_traffic(sl.id, sa.area)).sum())
            .collect()
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * y.abs().max(1.0))
    }

    #[test]
    fn counter_example_allocations() {
        let s = counter_example();
        s.validate().unwrap();
        let des = designated_paths(&s).unwrap();
        let md = multi_domain_drf(&s, &DrfSettings::greedy(), &des).unwrap();
        assert!(close(&volumes(&s, &md), &[4.0, 8.0, 8.0]), "{:?}", volumes(&s, &md));
        let pd = per_domain_drf(&s, &DrfSettings::greedy(), &des).unwrap();
        let third = 20.0 / 3.0;
        assert!(close(&volumes(&s, &pd), &[third; 3]), "{:?}", volumes(&s, &pd));
        let uni = uniform_allocation(&s, &UniformAllocationSpec::equal_weights(&s, &des)).unwrap();
        assert!(close(&volumes(&s, &uni), &[third; 3]));

        let md_fail = sharing_incentive_violation_scan(&md, &uni);
        assert_eq!(md_fail.len(), 1);
        assert_eq!(md_fail[0].slice, SliceId(0));
        assert!((md_fail[0].ratio - 0.6).abs() < 1e-12);
        assert!(sharing_incentive_violation_scan(&pd, &uni).is_empty());
        assert!(sharing_incentive_violation_scan(&uni, &uni).is_empty());
    }

    #[test]
    fn md_dominant_shares_equalize() {
        let s = counter_example();
        let des = designated_paths(&s).unwrap();
        let md = multi_domain_drf(&s, &DrfSettings::greedy(), &des).unwrap();
        let info = md_dominant_shares(&s, &DrfSettings::greedy(), &des, &md).unwrap();
        assert_eq!(info[0].dominant, (NodeId(0), 0));
        assert_eq!(info[1].dominant, (NodeId(1), 0));
        let z0 = info[0].z / info[0].weight;
        for i in &info {
            assert!((i.z / i.weight - z0).abs() <= 1e-9 * z0);
        }
    }

    #[test]
    fn single_tenant_equals_uniform() {
        let s = build(
            vec![
                node(0, Domain::Ran, "bw", 8.0),
                node(1, Domain::Cran, "cpu", 5.0),
                node(2, Domain::Cn, "cpu", 100.0),
            ],
            vec![path(0, 0, [0, 1, 2])],
            &[0],
        );
        let des = designated_paths(&s).unwrap();
        let uni = uniform_allocation(&s, &UniformAllocationSpec::equal_weights(&s, &des)).unwrap();
        let md = multi_domain_drf(&s, &DrfSettings::greedy(), &des).unwrap();
        let pd = per_domain_drf(&s, &DrfSettings::greedy(), &des).unwrap();
        for a in [&uni, &md, &pd] {
            assert!((a.path_traffic(SliceId(0), PathId(0)) - 5.0).abs() < 1e-12);
        }
    }

    fn twins() -> Scenario {
        build(
            vec![
                node(0, Domain::Ran, "bw", 8.0),
                node(1, Domain::Cran, "cpu", 6.0),
                node(2, Domain::Cn, "cpu", 100.0),
            ],
            vec![path(0, 0, [0, 1, 2])],
            &[0, 0],
        )
    }

    #[test]
    fn identical_slices_share_equally() {
        let s = twins();
        let des = designated_paths(&s).unwrap();
        let uni = uniform_allocation(&s, &UniformAllocationSpec::equal_weights(&s, &des)).unwrap();
        let md = multi_domain_drf(&s, &DrfSettings::greedy(), &des).unwrap();
        for a in [&uni, &md] {
            assert!(close(&volumes(&s, a), &[3.0, 3.0]));
        }
    }

    #[test]
    fn weights_scale_per_domain_volume() {
        let s = twins();
        let des = designated_paths(&s).unwrap();
        let w = BTreeMap::from([((SliceId(0), AreaId(0)), 2.0), ((SliceId(1), AreaId(0)), 1.0)]);
        let settings = DrfSettings {
            weights: Some(w),
            satiation_cap: false,
        };
        let pd = per_domain_drf(&s, &settings, &des).unwrap();
        assert!(close(&volumes(&s, &pd), &[4.0, 2.0]));
    }

    #[test]
    fn ran_bottleneck_caps_per_domain_flow() {
        // Slice 0's AP is the tight node; the CRAN share it would get is larger.
        let s = build(
            vec![
                node(0, Domain::Ran, "bw", 1.0),
                node(1, Domain::Ran, "bw", 50.0),
                node(2, Domain::Cran, "cpu", 10.0),
                node(3, Domain::Cn, "cpu", 100.0),
            ],
            vec![path(0, 0, [0, 2, 3]), path(1, 1, [1, 2, 3])],
            &[0, 1],
        );
        let des = designated_paths(&s).unwrap();
        let pd = per_domain_drf(&s, &DrfSettings::greedy(), &des).unwrap();
        let v = volumes(&s, &pd);
        assert!(close(&v, &[1.0, 5.0]), "{v:?}");
    }

    #[test]
    fn satiation_cap_stops_growth() {
        let s = twins();
        let des = designated_paths(&s).unwrap();
        // Path OPEX cost is 3 per unit, so phi = 10, alpha = 1 asks for 10/3.
        let w = BTreeMap::from([((SliceId(0), AreaId(0)), 1.0), ((SliceId(1), AreaId(0)), 1.0)]);
        let mut big = s.clone();
        big.topology.nodes[1].capacity.0[0] = 100.0;
        let md = multi_domain_drf(&big, &DrfSettings::weighted(w), &des).unwrap();
        assert!(close(&volumes(&big, &md), &[10.0 / 3.0, 10.0 / 3.0]));
    }

    #[test]
    fn filling_is_order_independent() {
        let flows = vec![
            FillFlow { rate: 1.0, cap: f64::INFINITY, usage: vec![(0, 1.0), (1, 2.0)] },
            FillFlow { rate: 2.0, cap: 3.0, usage: vec![(1, 1.0)] },
            FillFlow { rate: 0.5, cap: f64::INFINITY, usage: vec![(0, 1.0), (2, 1.0)] },
        ];
        let cap = vec![10.0, 12.0, 4.0];
        let a = progressive_fill(&flows, &cap);
        let rev: Vec<FillFlow> = flows.iter().rev().cloned().collect();
        let mut b = progressive_fill(&rev, &cap);
        b.reverse();
        assert_eq!(a, b);
    }

    #[test]
    fn designated_prefers_roomier_path() {
        let s = build(
            vec![
                node(0, Domain::Ran, "bw", 8.0),
                node(1, Domain::Cran, "cpu", 3.0),
                node(2, Domain::Cran, "cpu", 9.0),
                node(3, Domain::Cn, "cpu", 100.0),
            ],
            vec![path(0, 0, [0, 1, 3]), path(1, 0, [0, 2, 3])],
            &[0],
        );
        let des = designated_paths(&s).unwrap();
        assert_eq!(des[&(SliceId(0), AreaId(0))], PathId(1));
    }
}
