//! Small hand-checkable scenarios shared by tests and examples.

use crate::model::{
    AreaId, DemandEntry, DemandVector, Domain, NodeId, NodeSpec, PathId, PathSpec, ResourceVector,
    Scenario, SliceArea, SliceId, SliceSpec, Topology,
};
use crate::utility::{DelayParams, UtilityParams};

/// One RAN node with a single resource of capacity `cap` and OPEX 1, in
/// front of roomy, nearly free CRAN and CN nodes. One slice per entry of
/// `phis`, each with α = 1 and unit demand on the RAN node.
pub fn single_node(cap: f64, phis: &[f64]) -> Scenario {
    let node = |id, domain, c: f64, q: f64| NodeSpec {
        id: NodeId(id),
        domain,
        resources: vec!["cpu".into()],
        capacity: ResourceVector(vec![c]),
        opex: ResourceVector(vec![q]),
    };
    let slices = phis
        .iter()
        .enumerate()
        .map(|(n, &phi)| SliceSpec {
            id: SliceId(n),
            areas: vec![SliceArea {
                area: AreaId(0),
                utility: UtilityParams { phi, alpha: 1.0 },
                budget: 1e9,
                delay: DelayParams::default(),
            }],
            demands: [(0, 1.0), (1, 1e-12), (2, 1e-12)]
                .iter()
                .map(|&(i, d)| DemandEntry {
                    path: PathId(0),
                    node: NodeId(i),
                    demand: DemandVector(vec![d]),
                })
                .collect(),
        })
        .collect();
    Scenario {
        topology: Topology {
            areas: 1,
            nodes: vec![
                node(0, Domain::Ran, cap, 1.0),
                node(1, Domain::Cran, 1e12, 1e-12),
                node(2, Domain::Cn, 1e12, 1e-12),
            ],
            paths: vec![PathSpec {
                id: PathId(0),
                area: AreaId(0),
                nodes: vec![NodeId(0), NodeId(1), NodeId(2)],
            }],
        },
        slices,
    }
}

pub fn node(id: usize, domain: Domain, label: &str, cap: f64) -> NodeSpec {
    NodeSpec {
        id: NodeId(id),
        domain,
        resources: vec![label.into()],
        capacity: ResourceVector(vec![cap]),
        opex: ResourceVector(vec![1.0]),
    }
}

pub fn path(id: usize, area: usize, nodes: [usize; 3]) -> PathSpec {
    PathSpec {
        id: PathId(id),
        area: AreaId(area),
        nodes: nodes.iter().map(|&n| NodeId(n)).collect(),
    }
}

/// Single-resource nodes with OPEX 1; slice `k` lives in area `areas_of[k]`
/// with φ = 10, α = 1 and unit demand on every node of its area's paths.
pub fn unit_demand(nodes: Vec<NodeSpec>, paths: Vec<PathSpec>, areas_of: &[usize]) -> Scenario {
    let n_areas = paths.iter().map(|p| p.area.0 + 1).max().unwrap_or(0);
    let slices = areas_of
        .iter()
        .enumerate()
        .map(|(k, &a)| SliceSpec {
            id: SliceId(k),
            areas: vec![SliceArea {
                area: AreaId(a),
                utility: UtilityParams { phi: 10.0, alpha: 1.0 },
                budget: 1e9,
                delay: DelayParams::default(),
            }],
            demands: paths
                .iter()
                .filter(|p| p.area.0 == a)
                .flat_map(|p| {
                    p.nodes.iter().map(move |&i| DemandEntry {
                        path: p.id,
                        node: i,
                        demand: DemandVector(vec![1.0]),
                    })
                })
                .collect(),
        })
        .collect();
    Scenario {
        topology: Topology {
            areas: n_areas,
            nodes,
            paths,
        },
        slices,
    }
}

/// Two RAN cells (bandwidth 8 and 16) sharing a CRAN CPU pool of 20.
/// Slice 0 sits alone behind the small cell, slices 1 and 2 share the
/// large one. Multi-domain DRF equalizes dominant shares across domains
/// and starves slice 0; per-domain DRF splits the pool evenly.
pub fn counter_example() -> Scenario {
    unit_demand(
        vec![
            node(0, Domain::Ran, "comm_bw", 8.0),
            node(1, Domain::Ran, "comm_bw", 16.0),
            node(2, Domain::Cran, "cpu", 20.0),
            node(3, Domain::Cn, "cpu", 1000.0),
        ],
        vec![path(0, 0, [0, 2, 3]), path(1, 1, [1, 2, 3])],
        &[0, 1, 1],
    )
}
