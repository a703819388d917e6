//! The distributed resource provisioning auction: slices best-respond to
//! posted unit prices, nodes re-price from the aggregate bids, and slices
//! scale back to the traffic the new prices actually buy. Rounds repeat until
//! every slice's traffic matches its best response.
//!
//! Each round relaxes the per-area volume toward the best response with the
//! configured step. The split across a slice's paths is relaxed separately,
//! with a step that shrinks every time the slice's set of cheapest paths
//! changes. When that set never changes the two updates coincide with a plain
//! componentwise relaxation of the path vector.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{structural, Error, Result};
use crate::model::{
    path_unit_cost, AllocationState, AreaId, Market, NodeId, NodeSpec, PathId, PathTraffic,
    ResourceVector, Scenario, SliceId, SliceSpec, Topology,
};
use crate::oracle;
use crate::utility::{inverse_marginal, UtilityParams};

/// Relative band within which two path costs count as equally cheap.
pub const TIE_TOL: f64 = 1e-9;

/// Relative slack on budgets when judging a converged state.
pub const BUDGET_TOL: f64 = 1e-6;
/// Route shares that decay below this are dropped.
pub const SHARE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PriceTable {
    pub mu: Vec<ResourceVector>,
    pub eta: Vec<ResourceVector>,
}

impl PriceTable {
    /// Prices at the OPEX floor with nothing sold.
    pub fn at_opex(topology: &Topology) -> Self {
        PriceTable {
            mu: topology.nodes.iter().map(|n| n.opex.clone()).collect(),
            eta: topology
                .nodes
                .iter()
                .map(|n| ResourceVector::zeros(n.resource_count()))
                .collect(),
        }
    }

    pub fn mu(&self, node: NodeId, resource: usize) -> f64 {
        self.mu[node.0].0[resource]
    }

    pub fn eta(&self, node: NodeId, resource: usize) -> f64 {
        self.eta[node.0].0[resource]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BidMatrix {
    /// Payment per (slice, node) and resource slot.
    pub w: BTreeMap<(SliceId, NodeId), ResourceVector>,
    /// Payment per (slice, path, node), summed over resources.
    pub per_path_node: BTreeMap<(SliceId, PathId, NodeId), f64>,
    /// Payment per (slice, area).
    pub per_area: BTreeMap<(SliceId, AreaId), f64>,
}

impl BidMatrix {
    pub fn area_total(&self, slice: SliceId, area: AreaId) -> f64 {
        self.per_area.get(&(slice, area)).copied().unwrap_or(0.0)
    }

    pub fn path_node_total(&self, slice: SliceId, path: PathId, node: NodeId) -> f64 {
        self.per_path_node
            .get(&(slice, path, node))
            .copied()
            .unwrap_or(0.0)
    }

    /// Sum of bids over slices at one node.
    pub fn node_totals(&self, node: &NodeSpec) -> ResourceVector {
        let mut total = ResourceVector::zeros(node.resource_count());
        for ((_, i), w) in &self.w {
            if *i == node.id {
                total.add_scaled(1.0, w.as_slice());
            }
        }
        total
    }

    pub fn extend(&mut self, other: BidMatrix) {
        self.w.extend(other.w);
        self.per_path_node.extend(other.per_path_node);
        self.per_area.extend(other.per_area);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrpConfig {
    pub epsilon: f64,
    pub step: f64,
    pub max_iters: usize,
    pub zeta: f64,
    pub budget_enforcement: bool,
}

impl Default for DrpConfig {
    fn default() -> Self {
        DrpConfig {
            epsilon: 1e-3,
            step: 0.5,
            max_iters: 5000,
            zeta: 0.9,
            budget_enforcement: false,
        }
    }
}

impl DrpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        if !(self.step > 0.0 && self.step < 1.0) {
            return Err(Error::InvalidConfig("step must lie in (0, 1)".into()));
        }
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return Err(Error::InvalidConfig("zeta must lie in (0, 1)".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Threshold,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub iterations: usize,
    /// Largest per-area gap between current and best-response traffic, one
    /// entry per convergence check.
    pub deviations: Vec<f64>,
    pub kkt_residual: Option<f64>,
    pub terminated_by: Termination,
}

impl ConvergenceReport {
    pub fn converged(&self) -> bool {
        self.terminated_by == Termination::Threshold
    }
}

/// Rows of the optional per-iteration trace.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    /// (iteration, slice, area, x_{n,l}, min path cost, w_{n,l})
    pub slices: Vec<(usize, SliceId, AreaId, f64, f64, f64)>,
    /// (iteration, node, resource, mu, eta)
    pub prices: Vec<(usize, NodeId, usize, f64, f64)>,
}

impl Trace {
    /// Writes the slice rows to `path` and the price rows to a sibling file
    /// with `_prices` appended to the stem.
    pub fn write(&self, path: &Path) -> Result<()> {
        let io = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(out, "iteration,slice,area,x,min_path_cost,w").map_err(io)?;
        for (it, n, l, x, c, w) in &self.slices {
            writeln!(out, "{it},{n},{l},{},{},{}", fmt_num(*x), fmt_num(*c), fmt_num(*w))
                .map_err(io)?;
        }
        out.flush().map_err(io)?;

        let prices_path = prices_trace_path(path);
        let io = |source| Error::Io {
            path: prices_path.clone(),
            source,
        };
        let mut out = std::io::BufWriter::new(std::fs::File::create(&prices_path).map_err(io)?);
        writeln!(out, "iteration,node,resource,mu,eta").map_err(io)?;
        for (it, i, r, mu, eta) in &self.prices {
            writeln!(out, "{it},{i},{r},{},{}", fmt_num(*mu), fmt_num(*eta)).map_err(io)?;
        }
        out.flush().map_err(io)?;
        Ok(())
    }
}

pub fn prices_trace_path(path: &Path) -> std::path::PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ext = path
        .extension()
        .map(|e| format!(".{}", e.to_string_lossy()))
        .unwrap_or_default();
    path.with_file_name(format!("{stem}_prices{ext}"))
}

/// Nine significant digits, as used in every CSV the crate writes.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let s = format!("{:.8e}", v);
    let parsed: f64 = s.parse().expect("formatted float parses");
    format!("{parsed}")
}

#[derive(Debug, Clone)]
pub struct AuctionOutcome {
    pub allocation: AllocationState,
    pub prices: PriceTable,
    pub bids: BidMatrix,
    pub report: ConvergenceReport,
    /// Effective demand scale per (slice, area) after any budget back-off.
    pub phi: BTreeMap<(SliceId, AreaId), f64>,
    pub trace: Option<Trace>,
    /// Route-indexed traffic and stacked prices in [`Market`] layout.
    pub x: Vec<f64>,
    pub mu: Vec<f64>,
}

/// A slice's desired traffic on each of its paths at the given prices:
/// the whole best-response volume is spread evenly over the cheapest paths.
pub fn slice_best_response(
    slice: &SliceSpec,
    prices: &PriceTable,
    topology: &Topology,
) -> Result<PathTraffic> {
    let mut out = PathTraffic::new();
    for sa in &slice.areas {
        let mut costs = Vec::new();
        for path in topology.paths_in_area(sa.area) {
            costs.push((path.id, path_unit_cost(topology, path.id, slice, prices)?));
        }
        let (ids, cs): (Vec<PathId>, Vec<f64>) = costs.into_iter().unzip();
        let shares = best_response_group(&sa.utility, &cs)?;
        for (p, x) in ids.into_iter().zip(shares) {
            out.insert((slice.id, p), x);
        }
    }
    Ok(out)
}

/// Best-response traffic per path for one (slice, area) given path costs.
fn best_response_group(params: &UtilityParams, costs: &[f64]) -> Result<Vec<f64>> {
    let cmin = costs.iter().copied().fold(f64::INFINITY, f64::min);
    if !(cmin > 0.0) {
        return Err(Error::Domain(format!("path cost must be positive, got {cmin}")));
    }
    let total = inverse_marginal(params, cmin)?;
    let tied = costs.iter().filter(|&&c| c <= cmin * (1.0 + TIE_TOL)).count();
    Ok(costs
        .iter()
        .map(|&c| {
            if c <= cmin * (1.0 + TIE_TOL) {
                total / tied as f64
            } else {
                0.0
            }
        })
        .collect())
}

pub fn relaxed_update(x: &[f64], x_star: &[f64], step: f64) -> Vec<f64> {
    x.iter()
        .zip(x_star)
        .map(|(a, b)| (1.0 - step) * a + step * b)
        .collect()
}

/// Bids of one slice: price times the resources its traffic occupies.
pub fn compute_bids(
    slice: &SliceSpec,
    x_path: &PathTraffic,
    prices: &PriceTable,
    topology: &Topology,
) -> Result<BidMatrix> {
    let mut bids = BidMatrix::default();
    for (&(n, p), &x) in x_path {
        if n != slice.id {
            continue;
        }
        if !(x >= 0.0) {
            return Err(Error::Domain(format!("negative traffic {x}")));
        }
        let path = topology.path(p)?;
        let mut path_total = 0.0;
        for &i in &path.nodes {
            let node = topology.node(i)?;
            let d = slice.require_demand(p, i)?;
            let mu = prices
                .mu
                .get(i.0)
                .ok_or_else(|| structural(format!("no prices for node {i}")))?;
            let row = bids
                .w
                .entry((n, i))
                .or_insert_with(|| ResourceVector::zeros(node.resource_count()));
            let mut node_total = 0.0;
            for r in 0..node.resource_count() {
                let v = x * d.0[r] * mu.0[r];
                row.0[r] += v;
                node_total += v;
            }
            bids.per_path_node.insert((n, p, i), node_total);
            path_total += node_total;
        }
        *bids.per_area.entry((n, path.area)).or_insert(0.0) += path_total;
    }
    Ok(bids)
}

/// New unit prices and sold fractions of one node from the sum of its bids.
pub fn node_price_update(node: &NodeSpec, bid_totals: &ResourceVector) -> (ResourceVector, ResourceVector) {
    let mut mu = ResourceVector::zeros(node.resource_count());
    let mut eta = ResourceVector::zeros(node.resource_count());
    for r in 0..node.resource_count() {
        let (m, e) = price_rule(bid_totals.0[r], node.capacity.0[r], node.opex.0[r]);
        mu.0[r] = m;
        eta.0[r] = e;
    }
    (mu, eta)
}

fn price_rule(w: f64, cap: f64, q: f64) -> (f64, f64) {
    if w == 0.0 {
        return (q, 0.0);
    }
    ((w / cap).max(q), (w / (cap * q)).min(1.0))
}

/// Traffic that the new prices still buy: each path is scaled by the worst
/// price ratio over the resources it demands, never above one.
pub fn actual_traffic(
    x_path: &PathTraffic,
    mu_old: &PriceTable,
    mu_new: &PriceTable,
    topology: &Topology,
    slices: &[SliceSpec],
) -> Result<PathTraffic> {
    let mut out = PathTraffic::new();
    for (&(n, p), &x) in x_path {
        let slice = slices
            .get(n.0)
            .ok_or_else(|| structural(format!("unknown slice {n}")))?;
        let path = topology.path(p)?;
        let mut factor: f64 = 1.0;
        for &i in &path.nodes {
            let d = slice.require_demand(p, i)?;
            for (r, &dr) in d.0.iter().enumerate() {
                if dr > 0.0 {
                    factor = factor.min(mu_old.mu(i, r) / mu_new.mu(i, r));
                }
            }
        }
        out.insert((n, p), x * factor);
    }
    Ok(out)
}

pub fn budget_admission_control(payment: f64, budget: f64, zeta: f64, phi: f64) -> f64 {
    if payment > budget {
        zeta * phi
    } else {
        phi
    }
}

/// Runs the auction from zero traffic and OPEX prices.
pub fn run_auction(scenario: &Scenario, config: &DrpConfig) -> Result<AuctionOutcome> {
    let market = Market::new(scenario)?;
    run_market(&market, scenario, config, None, false)
}

/// Runs the auction on a compiled market, optionally from a given
/// route-indexed starting allocation and recording a trace.
pub fn run_market(
    market: &Market,
    scenario: &Scenario,
    config: &DrpConfig,
    x0: Option<&[f64]>,
    record_trace: bool,
) -> Result<AuctionOutcome> {
    config.validate()?;
    let nr = market.routes.len();
    let mut x = match x0 {
        Some(v) if v.len() != nr => {
            return Err(structural("initial allocation has the wrong length"))
        }
        Some(v) if v.iter().any(|a| !(*a >= 0.0)) => {
            return Err(Error::Domain("initial allocation must be non-negative".into()))
        }
        Some(v) => v.to_vec(),
        None => vec![0.0; nr],
    };
    let mut mu = market.opex.clone();
    let mut eta = vec![0.0; market.slot_count()];
    let mut phi: Vec<UtilityParams> = market.groups.iter().map(|g| g.params.utility).collect();
    let mut switches = vec![0u32; nr];
    let mut prev_ties: Option<Vec<bool>> = None;
    let mut deviations = Vec::new();
    let mut trace = record_trace.then(Trace::default);
    let mut terminated_by = Termination::MaxIters;

    for iteration in 0..config.max_iters {
        let costs = market.route_costs(&mu);
        let (xs, ties, cmin) = market_best_response(market, &costs, &phi)?;
        let totals = market.group_totals(&x);
        let totals_s = market.group_totals(&xs);
        let dev = totals
            .iter()
            .zip(&totals_s)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        deviations.push(dev);
        let payments = group_payments(market, &x, &costs);

        if let Some(t) = trace.as_mut() {
            for (g, group) in market.groups.iter().enumerate() {
                t.slices
                    .push((iteration, group.slice, group.area, totals[g], cmin[g], payments[g]));
            }
            for (k, slot) in market.slots.iter().enumerate() {
                t.prices.push((iteration, slot.node, slot.resource, mu[k], eta[k]));
            }
        }

        let over_budget = config.budget_enforcement
            && market
                .groups
                .iter()
                .zip(&payments)
                .any(|(g, &w)| w > g.params.budget * (1.0 + BUDGET_TOL));
        if dev <= config.epsilon && !over_budget {
            terminated_by = Termination::Threshold;
            break;
        }

        if let Some(prev) = &prev_ties {
            for ((n, a), b) in switches.iter_mut().zip(prev).zip(&ties) {
                if a != b {
                    *n += 1;
                }
            }
        }

        let mut x_new = vec![0.0; nr];
        for (g, group) in market.groups.iter().enumerate() {
            let volume = (1.0 - config.step) * totals[g] + config.step * totals_s[g];
            let mut kept = 0.0;
            for k in group.routes.clone() {
                let share = if totals[g] > 0.0 {
                    x[k] / totals[g]
                } else {
                    xs[k] / totals_s[g]
                };
                let target = xs[k] / totals_s[g];
                let share_step = config.step / (1.0 + switches[k] as f64);
                let mut next = (1.0 - share_step) * share + share_step * target;
                if target == 0.0 && next < SHARE_FLOOR {
                    next = 0.0;
                }
                x_new[k] = next;
                kept += next;
            }
            for k in group.routes.clone() {
                x_new[k] *= volume / kept;
            }
        }

        if config.budget_enforcement {
            let w = group_payments(market, &x_new, &costs);
            for (g, group) in market.groups.iter().enumerate() {
                phi[g].phi =
                    budget_admission_control(w[g], group.params.budget, config.zeta, phi[g].phi);
            }
        }

        let load = market.load(&x_new);
        let mut mu_new = vec![0.0; mu.len()];
        for k in 0..mu.len() {
            let (m, e) = price_rule(mu[k] * load[k], market.capacity[k], market.opex[k]);
            mu_new[k] = m;
            eta[k] = e;
        }
        for (route, xv) in market.routes.iter().zip(x_new.iter_mut()) {
            let factor = route
                .usage
                .iter()
                .map(|&(k, _)| mu[k] / mu_new[k])
                .fold(1.0, f64::min);
            *xv *= factor;
        }
        x = x_new;
        mu = mu_new;
        prev_ties = Some(ties);
    }

    let allocation = market.allocation(&x, scenario)?;
    let per_node_mu = market.per_node(&mu);
    let prices = PriceTable {
        mu: per_node_mu,
        eta: market.per_node(&eta),
    };
    let mut bids = BidMatrix::default();
    for slice in &scenario.slices {
        bids.extend(compute_bids(slice, allocation.x_path(), &prices, &scenario.topology)?);
    }
    let kkt = oracle::kkt_residual_dense(market, &x, &mu, &phi).combined();
    let phi_map = market
        .groups
        .iter()
        .zip(&phi)
        .map(|(g, p)| ((g.slice, g.area), p.phi))
        .collect();
    Ok(AuctionOutcome {
        allocation,
        prices,
        bids,
        report: ConvergenceReport {
            iterations: deviations.len(),
            deviations,
            kkt_residual: Some(kkt),
            terminated_by,
        },
        phi: phi_map,
        trace,
        x,
        mu,
    })
}

/// Best response for every group: route traffic, tie flags and min cost.
pub(crate) fn market_best_response(
    market: &Market,
    costs: &[f64],
    params: &[UtilityParams],
) -> Result<(Vec<f64>, Vec<bool>, Vec<f64>)> {
    let mut xs = vec![0.0; market.routes.len()];
    let mut ties = vec![false; market.routes.len()];
    let mut cmins = Vec::with_capacity(market.groups.len());
    for (g, group) in market.groups.iter().enumerate() {
        let r = group.routes.clone();
        let shares = best_response_group(&params[g], &costs[r.clone()])?;
        let cmin = costs[r.clone()].iter().copied().fold(f64::INFINITY, f64::min);
        for k in r {
            xs[k] = shares[k - group.routes.start];
            ties[k] = costs[k] <= cmin * (1.0 + TIE_TOL);
        }
        cmins.push(cmin);
    }
    Ok((xs, ties, cmins))
}

/// Per-group payment `sum over routes of x * unit cost`.
pub(crate) fn group_payments(market: &Market, x: &[f64], costs: &[f64]) -> Vec<f64> {
    market
        .groups
        .iter()
        .map(|g| g.routes.clone().map(|k| x[k] * costs[k]).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::single_node;
    use crate::model::{AreaId, Domain, NodeSpec};
    use approx::assert_relative_eq;

    fn flat_prices(topology: &Topology, v: f64) -> PriceTable {
        PriceTable {
            mu: topology
                .nodes
                .iter()
                .map(|n| ResourceVector(vec![v; n.resource_count()]))
                .collect(),
            eta: topology
                .nodes
                .iter()
                .map(|n| ResourceVector::zeros(n.resource_count()))
                .collect(),
        }
    }

    #[test]
    fn best_response_examples() {
        let p = UtilityParams { phi: 20.0, alpha: 1.0 };
        assert_eq!(best_response_group(&p, &[2.0]).unwrap(), vec![10.0]);
        let p = UtilityParams { phi: 9.0, alpha: 1.0 };
        assert_eq!(best_response_group(&p, &[3.0, 5.0]).unwrap(), vec![3.0, 0.0]);
        assert_eq!(best_response_group(&p, &[3.0, 3.0]).unwrap(), vec![1.5, 1.5]);
        assert!(best_response_group(&p, &[0.0, 3.0]).is_err());
    }

    #[test]
    fn best_response_over_scenario() {
        let s = single_node(10.0, &[20.0]);
        let mut prices = flat_prices(&s.topology, 0.0);
        prices.mu[0].0[0] = 2.0;
        let x = slice_best_response(&s.slices[0], &prices, &s.topology).unwrap();
        assert_relative_eq!(x[&(SliceId(0), PathId(0))], 10.0, max_relative = 1e-9);
        let zero = flat_prices(&s.topology, 0.0);
        assert!(slice_best_response(&s.slices[0], &zero, &s.topology).is_err());
    }

    #[test]
    fn relaxed_update_examples() {
        assert_eq!(relaxed_update(&[4.0], &[8.0], 0.5), vec![6.0]);
        let same = relaxed_update(&[3.0, 1.0], &[3.0, 1.0], 0.3);
        assert_relative_eq!(same[0], 3.0, max_relative = 1e-15);
        assert_relative_eq!(same[1], 1.0, max_relative = 1e-15);
        assert_relative_eq!(relaxed_update(&[0.0], &[10.0], 0.1)[0], 1.0);
    }

    #[test]
    fn bid_examples() {
        let s = single_node(10.0, &[20.0]);
        let mut prices = flat_prices(&s.topology, 0.0);
        prices.mu[0].0[0] = 2.0;
        let x = PathTraffic::from([((SliceId(0), PathId(0)), 10.0)]);
        let b = compute_bids(&s.slices[0], &x, &prices, &s.topology).unwrap();
        assert_eq!(b.w[&(SliceId(0), NodeId(0))].0, vec![20.0]);
        assert_eq!(b.area_total(SliceId(0), AreaId(0)), 20.0);
        assert_eq!(b.path_node_total(SliceId(0), PathId(0), NodeId(0)), 20.0);

        let zero = PathTraffic::from([((SliceId(0), PathId(0)), 0.0)]);
        let b0 = compute_bids(&s.slices[0], &zero, &prices, &s.topology).unwrap();
        assert!(b0.w.values().all(|v| v.iter().all(|&w| w == 0.0)));

        prices.mu[0].0[0] = 4.0;
        let b2 = compute_bids(&s.slices[0], &x, &prices, &s.topology).unwrap();
        assert_eq!(b2.w[&(SliceId(0), NodeId(0))].0, vec![40.0]);
    }

    #[test]
    fn price_update_examples() {
        let node = NodeSpec {
            id: NodeId(0),
            domain: Domain::Ran,
            resources: vec!["cpu".into()],
            capacity: ResourceVector(vec![20.0]),
            opex: ResourceVector(vec![1.0]),
        };
        let (mu, eta) = node_price_update(&node, &ResourceVector(vec![30.0]));
        assert_eq!((mu.0[0], eta.0[0]), (1.5, 1.0));
        let (mu, eta) = node_price_update(&node, &ResourceVector(vec![10.0]));
        assert_eq!((mu.0[0], eta.0[0]), (1.0, 0.5));
        let (mu, eta) = node_price_update(&node, &ResourceVector(vec![0.0]));
        assert_eq!((mu.0[0], eta.0[0]), (1.0, 0.0));
        // Allocations w / mu never exceed capacity.
        for w in [5.0, 20.0, 33.3, 1e6] {
            let (mu, _) = node_price_update(&node, &ResourceVector(vec![w]));
            assert!(w / mu.0[0] <= 20.0 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn actual_traffic_examples() {
        let s = single_node(10.0, &[20.0]);
        let x = PathTraffic::from([((SliceId(0), PathId(0)), 6.0)]);
        let p1 = flat_prices(&s.topology, 1.0);
        let same = actual_traffic(&x, &p1, &p1, &s.topology, &s.slices).unwrap();
        assert_eq!(same, x);
        let mut p2 = p1.clone();
        p2.mu[0].0[0] = 2.0;
        let halved = actual_traffic(&x, &p1, &p2, &s.topology, &s.slices).unwrap();
        assert_eq!(halved[&(SliceId(0), PathId(0))], 3.0);
        let mut p3 = p1.clone();
        p3.mu[0].0[0] = 0.5;
        let capped = actual_traffic(&x, &p1, &p3, &s.topology, &s.slices).unwrap();
        assert_eq!(capped[&(SliceId(0), PathId(0))], 6.0);
    }

    #[test]
    fn budget_rule() {
        assert_relative_eq!(budget_admission_control(120.0, 100.0, 0.9, 10.0), 9.0);
        assert_eq!(budget_admission_control(80.0, 100.0, 0.9, 10.0), 10.0);
        let mut phi = 10.0;
        for _ in 0..5 {
            let next = budget_admission_control(120.0, 100.0, 0.9, phi);
            assert!(next < phi);
            phi = next;
        }
    }

    #[test]
    fn single_node_fixture_converges() {
        let s = single_node(10.0, &[20.0]);
        let cfg = DrpConfig {
            epsilon: 1e-7,
            ..DrpConfig::default()
        };
        let out = run_auction(&s, &cfg).unwrap();
        assert!(out.report.converged());
        let x = out.allocation.path_traffic(SliceId(0), PathId(0));
        assert!((x - 10.0).abs() < 1e-5, "x = {x}");
        assert!((out.prices.mu(NodeId(0), 0) - 2.0).abs() < 1e-5);
        assert!((out.bids.area_total(SliceId(0), AreaId(0)) - 20.0).abs() < 1e-4);
        assert_eq!(out.prices.eta(NodeId(0), 0), 1.0);
    }

    #[test]
    fn interior_fixture_keeps_opex_price() {
        let s = single_node(30.0, &[20.0]);
        let cfg = DrpConfig {
            epsilon: 1e-7,
            ..DrpConfig::default()
        };
        let out = run_auction(&s, &cfg).unwrap();
        let x = out.allocation.path_traffic(SliceId(0), PathId(0));
        assert!((x - 20.0).abs() < 1e-5);
        assert_eq!(out.prices.mu(NodeId(0), 0), 1.0);
        assert!((out.prices.eta(NodeId(0), 0) - 2.0 / 3.0).abs() < 1e-5);
    }

    #[test]
    fn empty_market() {
        let mut s = single_node(10.0, &[20.0]);
        s.slices.clear();
        let out = run_auction(&s, &DrpConfig::default()).unwrap();
        assert_eq!(out.report.iterations, 1);
        assert!(out.report.converged());
        assert_eq!(out.prices.mu(NodeId(0), 0), 1.0);
        assert!(out.allocation.x_path().is_empty());
    }

    #[test]
    fn budget_enforcement_backs_off_demand() {
        let mut s = single_node(10.0, &[20.0]);
        s.slices[0].areas[0].budget = 12.0;
        let cfg = DrpConfig {
            budget_enforcement: true,
            epsilon: 1e-6,
            ..DrpConfig::default()
        };
        let out = run_auction(&s, &cfg).unwrap();
        assert!(out.report.converged());
        let w = out.bids.area_total(SliceId(0), AreaId(0));
        assert!(w <= 12.0 * (1.0 + BUDGET_TOL), "w = {w}");
        assert!(out.phi[&(SliceId(0), AreaId(0))] < 20.0);
    }

    #[test]
    fn deterministic_reports() {
        let s = single_node(10.0, &[20.0, 7.0, 3.0]);
        let a = run_auction(&s, &DrpConfig::default()).unwrap();
        let b = run_auction(&s, &DrpConfig::default()).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.x, b.x);
        assert_eq!(a.mu, b.mu);
    }

    #[test]
    fn trace_has_fixed_columns() {
        let s = single_node(10.0, &[20.0]);
        let market = Market::new(&s).unwrap();
        let out = run_market(&market, &s, &DrpConfig::default(), None, true).unwrap();
        let trace = out.trace.unwrap();
        assert_eq!(trace.slices.len(), out.report.iterations);
        assert_eq!(trace.prices.len(), out.report.iterations * 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        trace.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("iteration,slice,area,x,min_path_cost,w\n"));
        let prices = std::fs::read_to_string(dir.path().join("trace_prices.csv")).unwrap();
        assert!(prices.starts_with("iteration,node,resource,mu,eta\n"));
    }

    #[test]
    fn number_format_has_nine_significant_digits() {
        assert_eq!(fmt_num(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_num(2.0), "2");
        assert_eq!(fmt_num(123456789012.0), "123456789000");
        assert_eq!(fmt_num(0.0), "0");
    }
}
