//! Independent certification of auction outcomes.
//!
//! The reference solver is a primal log-barrier method with Newton steps.
//! The barrier Hessian is diagonal plus one rank-one block per (slice, area)
//! plus `A^T S^-2 A` over the capacity rows, so each Newton system is solved
//! with Sherman-Morrison on the blocks and Woodbury on the small capacity
//! system, followed by a few rounds of iterative refinement. Once the
//! barrier becomes too ill-conditioned for the Newton direction to be
//! trusted the solver keeps the last centered point.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::baselines::{uniform_allocation, UniformAllocationSpec};
use crate::drp::{BidMatrix, PriceTable};
use crate::error::{structural, Result};
use crate::model::{
    AllocationState, AreaId, Market, PathId, PathTraffic, Scenario, SliceId,
};
use crate::utility::{payoff, utility_with_reference, Revenue, UtilityParams};

/// Relative slack for the fairness checks.
pub const FAIRNESS_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct KktCertificate {
    /// Capacity multipliers in stacked slot order.
    pub lambda: Vec<f64>,
    /// Non-negativity multipliers per route, reconstructed from cost slack.
    pub nu: Vec<f64>,
    pub stationarity: f64,
    pub complementary_slackness: f64,
    pub primal: f64,
}

impl KktCertificate {
    pub fn combined(&self) -> f64 {
        self.stationarity
            .max(self.complementary_slackness)
            .max(self.primal)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.combined() <= tol
    }
}

/// Per-(slice, area) objective term.
#[derive(Debug, Clone, Copy)]
enum Term {
    Utility(UtilityParams),
    /// `w * ln X`
    Log(f64),
}

impl Term {
    fn value(&self, z: f64) -> f64 {
        match *self {
            Term::Utility(p) => utility_with_reference(&p, z, p.reference_point()),
            Term::Log(w) => w * z.ln(),
        }
    }

    fn d1(&self, z: f64) -> f64 {
        match *self {
            Term::Utility(p) => (p.phi / z).powf(p.alpha),
            Term::Log(w) => w / z,
        }
    }

    /// Negated second derivative (non-negative).
    fn neg_d2(&self, z: f64) -> f64 {
        match *self {
            Term::Utility(p) => p.alpha * (p.phi / z).powf(p.alpha) / z,
            Term::Log(w) => w / (z * z),
        }
    }
}

fn grad_scale(g: &[f64]) -> f64 {
    g.iter().fold(0.0, |a: f64, v| a.max(v.abs()))
}

/// Builds the certificate for route traffic `x` at stacked prices `mu`,
/// identifying the capacity multipliers as `mu - q`.
pub fn kkt_residual_dense(
    market: &Market,
    x: &[f64],
    mu: &[f64],
    params: &[UtilityParams],
) -> KktCertificate {
    kkt_generic(market, x, mu, |g, z| {
        if z > 0.0 {
            (params[g].phi / z).powf(params[g].alpha)
        } else {
            f64::INFINITY
        }
    })
}

fn kkt_generic(
    market: &Market,
    x: &[f64],
    mu: &[f64],
    marginal: impl Fn(usize, f64) -> f64,
) -> KktCertificate {
    let costs = market.route_costs(mu);
    let totals = market.group_totals(x);
    let mut stationarity: f64 = 0.0;
    let mut nu = vec![0.0; market.routes.len()];
    for (g, group) in market.groups.iter().enumerate() {
        let m = marginal(g, totals[g]);
        for k in group.routes.clone() {
            let c = costs[k];
            let under = (m - c).max(0.0) / c;
            stationarity = stationarity.max(under);
            if x[k] > 0.0 {
                stationarity = stationarity.max(x[k] / totals[g] * (m - c).abs() / c);
            } else {
                nu[k] = (c - m).max(0.0);
            }
        }
    }
    let load = market.load(x);
    let mut lambda = vec![0.0; mu.len()];
    let mut slack: f64 = 0.0;
    let mut primal: f64 = 0.0;
    for k in 0..mu.len() {
        let q = market.opex[k];
        let cap = market.capacity[k];
        lambda[k] = mu[k] - q;
        if lambda[k] < 0.0 {
            slack = slack.max(-lambda[k] / q);
        }
        if cap > 0.0 {
            slack = slack.max(lambda[k].max(0.0) / mu[k] * (cap - load[k]).max(0.0) / cap);
        }
        primal = primal.max(load[k] - cap);
    }
    KktCertificate {
        lambda: lambda.into_iter().map(|l| l.max(0.0)).collect(),
        nu,
        stationarity,
        complementary_slackness: slack,
        primal,
    }
}

/// Certificate for an allocation and prices on a scenario, using the
/// scenario's own demand scales.
pub fn kkt_residual(
    allocation: &AllocationState,
    prices: &PriceTable,
    scenario: &Scenario,
) -> Result<KktCertificate> {
    let market = Market::new(scenario)?;
    let x = market.route_vector(allocation);
    let mu = market.stack(&prices.mu);
    if mu.len() != market.slot_count() {
        return Err(structural("price table does not match the topology"));
    }
    let params: Vec<UtilityParams> = market.groups.iter().map(|g| g.params.utility).collect();
    Ok(kkt_residual_dense(&market, &x, &mu, &params))
}

/// Social welfare: total utility minus OPEX of the resources used.
pub fn welfare_dense(market: &Market, x: &[f64], params: &[UtilityParams]) -> f64 {
    let totals = market.group_totals(x);
    let u: f64 = totals
        .iter()
        .zip(params)
        .map(|(&z, p)| utility_with_reference(p, z, p.reference_point()))
        .sum();
    let load = market.load(x);
    u - load.iter().zip(&market.opex).map(|(l, q)| l * q).sum::<f64>()
}

pub fn welfare(allocation: &AllocationState, scenario: &Scenario) -> Result<f64> {
    let market = Market::new(scenario)?;
    let params: Vec<UtilityParams> = market.groups.iter().map(|g| g.params.utility).collect();
    Ok(welfare_dense(&market, &market.route_vector(allocation), &params))
}

/// Objective of the social-welfare problem at route traffic `x`.
pub fn problem1_objective(market: &Market, x: &[f64]) -> f64 {
    let params: Vec<UtilityParams> = market.groups.iter().map(|g| g.params.utility).collect();
    welfare_dense(market, x, &params)
}

/// Analytic gradient of [`problem1_objective`] with respect to route traffic.
pub fn problem1_gradient(market: &Market, x: &[f64]) -> Vec<f64> {
    let totals = market.group_totals(x);
    let qcost = market.route_costs(&market.opex);
    market
        .routes
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let p = market.groups[r.group].params.utility;
            (p.phi / totals[r.group]).powf(p.alpha) - qcost[k]
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_newton: usize,
    pub t_growth: f64,
    pub t_max: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol: 1e-8,
            max_newton: 5000,
            t_growth: 10.0,
            t_max: 1e16,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub allocation: AllocationState,
    pub certificate: KktCertificate,
    /// Route-indexed traffic in [`Market`] layout.
    pub x: Vec<f64>,
    pub objective: f64,
    pub newton_steps: usize,
}

struct Program<'a> {
    market: &'a Market,
    terms: Vec<Term>,
    /// Route index of each variable.
    vars: Vec<usize>,
    /// Group of each variable, compacted to groups that have variables.
    var_group: Vec<usize>,
    group_terms: Vec<Term>,
    /// Stacked slot of each capacity row.
    rows: Vec<usize>,
    /// Sparse columns: (row, coefficient) per variable.
    cols: Vec<Vec<(usize, f64)>>,
    cap: Vec<f64>,
    qcost: Vec<f64>,
}

impl<'a> Program<'a> {
    fn new(market: &'a Market, terms: Vec<Term>, active_group: &[bool]) -> Self {
        let qc = market.route_costs(&market.opex);
        let mut vars = Vec::new();
        let mut var_group = Vec::new();
        let mut group_terms = Vec::new();
        for (g, group) in market.groups.iter().enumerate() {
            if !active_group[g] || group.routes.is_empty() {
                continue;
            }
            let cg = group_terms.len();
            group_terms.push(terms[g]);
            for k in group.routes.clone() {
                vars.push(k);
                var_group.push(cg);
            }
        }
        let mut row_of = vec![usize::MAX; market.slot_count()];
        let mut rows = Vec::new();
        let mut cols = Vec::with_capacity(vars.len());
        for &k in &vars {
            let mut col = Vec::new();
            for &(slot, d) in &market.routes[k].usage {
                if row_of[slot] == usize::MAX {
                    row_of[slot] = rows.len();
                    rows.push(slot);
                }
                col.push((row_of[slot], d));
            }
            cols.push(col);
        }
        let cap = rows.iter().map(|&s| market.capacity[s]).collect();
        let qcost = vars.iter().map(|&k| qc[k]).collect();
        Program {
            market,
            terms,
            vars,
            var_group,
            group_terms,
            rows,
            cols,
            cap,
            qcost,
        }
    }

    fn ng(&self) -> usize {
        self.group_terms.len()
    }

    fn totals(&self, x: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; self.ng()];
        for (v, &xv) in x.iter().enumerate() {
            t[self.var_group[v]] += xv;
        }
        t
    }

    fn slack(&self, x: &[f64]) -> Vec<f64> {
        let mut s = self.cap.clone();
        for (col, &xv) in self.cols.iter().zip(x) {
            for &(r, d) in col {
                s[r] -= d * xv;
            }
        }
        s
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let totals = self.totals(x);
        let u: f64 = totals
            .iter()
            .zip(&self.group_terms)
            .map(|(&z, t)| t.value(z))
            .sum();
        u - x.iter().zip(&self.qcost).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Barrier function `-t f - sum ln x - sum ln s`, or `None` outside the domain.
    fn barrier(&self, t: f64, x: &[f64]) -> Option<f64> {
        if x.iter().any(|&v| !(v > 0.0)) {
            return None;
        }
        let s = self.slack(x);
        if s.iter().any(|&v| !(v > 0.0)) {
            return None;
        }
        let f = self.objective(x);
        if !f.is_finite() {
            return None;
        }
        Some(-t * f - x.iter().map(|v| v.ln()).sum::<f64>() - s.iter().map(|v| v.ln()).sum::<f64>())
    }

    fn initial_point(&self) -> Vec<f64> {
        let mut row_sum = vec![0.0; self.rows.len()];
        for col in &self.cols {
            for &(r, d) in col {
                row_sum[r] += d;
            }
        }
        let theta = row_sum
            .iter()
            .zip(&self.cap)
            .filter(|(s, _)| **s > 0.0)
            .map(|(s, c)| c / s)
            .fold(f64::INFINITY, f64::min);
        let theta = if theta.is_finite() { 0.5 * theta } else { 1.0 };
        vec![theta; self.vars.len()]
    }

    /// Newton direction for the barrier at `x`. Returns (direction, gradient).
    fn newton(&self, t: f64, x: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let nv = x.len();
        let m = self.rows.len();
        let totals = self.totals(x);
        let s = self.slack(x);
        let mut grad = vec![0.0; nv];
        for v in 0..nv {
            let g = self.var_group[v];
            let mut val = -t * (self.group_terms[g].d1(totals[g]) - self.qcost[v]) - 1.0 / x[v];
            for &(r, d) in &self.cols[v] {
                val += d / s[r];
            }
            grad[v] = val;
        }
        let dinv: Vec<f64> = x.iter().map(|v| v * v).collect();
        let h: Vec<f64> = (0..self.ng())
            .map(|g| t * self.group_terms[g].neg_d2(totals[g]))
            .collect();
        let mut sum_dinv = vec![0.0; self.ng()];
        for v in 0..nv {
            sum_dinv[self.var_group[v]] += dinv[v];
        }
        let binv = |y: &[f64]| -> Vec<f64> {
            let mut u: Vec<f64> = y.iter().zip(&dinv).map(|(a, b)| a * b).collect();
            let mut su = vec![0.0; self.ng()];
            for v in 0..nv {
                su[self.var_group[v]] += u[v];
            }
            for v in 0..nv {
                let g = self.var_group[v];
                u[v] -= h[g] * su[g] / (1.0 + h[g] * sum_dinv[g]) * dinv[v];
            }
            u
        };
        let neg_grad: Vec<f64> = grad.iter().map(|g| -g).collect();
        if m == 0 {
            return Some((binv(&neg_grad), grad));
        }
        // Z = B^-1 A^T, one column per capacity row.
        let mut a_rows = vec![vec![0.0; nv]; m];
        for (v, col) in self.cols.iter().enumerate() {
            for &(r, d) in col {
                a_rows[r][v] = d;
            }
        }
        let z: Vec<Vec<f64>> = a_rows.iter().map(|a| binv(a)).collect();
        let mut mm = DMatrix::<f64>::zeros(m, m);
        for j in 0..m {
            for k in j..m {
                let val: f64 = self.sparse_row_dot(j, &z[k], &a_rows);
                mm[(j, k)] = val;
                mm[(k, j)] = val;
            }
            mm[(j, j)] += s[j] * s[j];
        }
        let chol = mm.clone().cholesky();
        let lu = mm.lu();
        let solve = |rhs: &[f64]| -> Option<Vec<f64>> {
            let base = binv(rhs);
            let r = DVector::from_iterator(m, (0..m).map(|j| self.sparse_row_dot(j, &base, &a_rows)));
            let y = match &chol {
                Some(ch) => ch.solve(&r),
                None => lu.solve(&r)?,
            };
            let mut dir = base;
            for k in 0..m {
                let yk = y[k];
                if yk == 0.0 {
                    continue;
                }
                for v in 0..nv {
                    dir[v] -= z[k][v] * yk;
                }
            }
            Some(dir)
        };
        // Exact Hessian-vector product for refinement.
        let hess = |d: &[f64]| -> Vec<f64> {
            let mut sg = vec![0.0; self.ng()];
            for v in 0..nv {
                sg[self.var_group[v]] += d[v];
            }
            let mut ad = vec![0.0; m];
            for (v, col) in self.cols.iter().enumerate() {
                for &(r, c) in col {
                    ad[r] += c * d[v];
                }
            }
            (0..nv)
                .map(|v| {
                    let mut val = d[v] / dinv[v] + h[self.var_group[v]] * sg[self.var_group[v]];
                    for &(r, c) in &self.cols[v] {
                        val += c * ad[r] / (s[r] * s[r]);
                    }
                    val
                })
                .collect()
        };
        let mut dir = solve(&neg_grad)?;
        for _ in 0..3 {
            let hd = hess(&dir);
            let res: Vec<f64> = neg_grad.iter().zip(&hd).map(|(a, b)| a - b).collect();
            let scale = neg_grad.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if res.iter().all(|r| r.abs() <= 1e-14 * scale) {
                break;
            }
            let corr = solve(&res)?;
            for (d, c) in dir.iter_mut().zip(&corr) {
                *d += c;
            }
        }
        Some((dir, grad))
    }

    fn sparse_row_dot(&self, row: usize, vec: &[f64], a_rows: &[Vec<f64>]) -> f64 {
        a_rows[row]
            .iter()
            .zip(vec)
            .filter(|(a, _)| **a != 0.0)
            .map(|(a, b)| a * b)
            .sum()
    }

    fn solve(&self, settings: &SolverSettings) -> (Vec<f64>, Vec<f64>, usize) {
        let nv = self.vars.len();
        let m = self.rows.len();
        if nv == 0 {
            return (Vec::new(), vec![0.0; m], 0);
        }
        let mut x = self.initial_point();
        let f0 = self.objective(&x).abs().max(1.0);
        let mut t = (nv + m) as f64 / f0;
        let mut steps = 0;
        // Duals from the last outer step that reached the central path.
        let mut lambda: Option<Vec<f64>> = None;
        let mut best: Option<Vec<f64>> = None;
        loop {
            let mut centered = false;
            let mut lost = false;
            for _ in 0..200 {
                if steps >= settings.max_newton {
                    break;
                }
                let Some((dir, grad)) = self.newton(t, &x) else {
                    break;
                };
                steps += 1;
                let decrement: f64 = -grad.iter().zip(&dir).map(|(g, d)| g * d).sum::<f64>();
                if !decrement.is_finite() || decrement < -1e-9 * (1.0 + grad_scale(&grad)) {
                    // Direction lost to roundoff.
                    lost = true;
                    break;
                }
                if decrement <= 1e-12 {
                    centered = true;
                    break;
                }
                let phi0 = match self.barrier(t, &x) {
                    Some(v) => v,
                    None => break,
                };
                let mut step = 1.0;
                let mut accepted = false;
                while step > 1e-14 {
                    let cand: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
                    if let Some(v) = self.barrier(t, &cand) {
                        if v <= phi0 - 0.25 * step * decrement {
                            x = cand;
                            accepted = true;
                            break;
                        }
                    }
                    step *= 0.5;
                }
                if !accepted {
                    // A tiny decrement is below the barrier's roundoff.
                    if decrement < 1e-6 {
                        centered = true;
                    } else {
                        lost = true;
                    }
                    break;
                }
                if decrement < 1e-10 {
                    centered = true;
                    break;
                }
            }
            if centered || lambda.is_none() {
                let s = self.slack(&x);
                lambda = Some(s.iter().map(|v| 1.0 / (t * v)).collect());
            }
            if lost && best.is_some() {
                // Past the precision the Newton system supports; keep the last centered point.
                x = best.take().unwrap();
                break;
            }
            if centered {
                best = Some(x.clone());
            }
            let gap = (nv + m) as f64 / t;
            if gap <= settings.tol * self.objective(&x).abs().max(1.0)
                || t >= settings.t_max
                || steps >= settings.max_newton
            {
                break;
            }
            t *= settings.t_growth;
        }
        (x, lambda.unwrap_or_else(|| vec![0.0; m]), steps)
    }

    fn expand(&self, xv: &[f64], lambda_rows: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut x = vec![0.0; self.market.routes.len()];
        for (v, &k) in self.vars.iter().enumerate() {
            x[k] = xv[v];
        }
        let mut mu = self.market.opex.clone();
        for (r, &slot) in self.rows.iter().enumerate() {
            mu[slot] += lambda_rows[r];
        }
        (x, mu)
    }
}

fn finish(market: &Market, scenario: &Scenario, terms: &[Term], active: &[bool], settings: &SolverSettings) -> Result<Solution> {
    let program = Program::new(market, terms.to_vec(), active);
    let (xv, lambda, steps) = program.solve(settings);
    let (x, mu) = program.expand(&xv, &lambda);
    let certificate = kkt_generic(market, &x, &mu, |g, z| {
        if !active[g] {
            return 0.0;
        }
        if z > 0.0 {
            program.terms[g].d1(z)
        } else {
            f64::INFINITY
        }
    });
    let objective = program.objective(&xv);
    Ok(Solution {
        allocation: market.allocation(&x, scenario)?,
        certificate,
        x,
        objective,
        newton_steps: steps,
    })
}

/// Maximizes total utility minus OPEX under the capacity constraints.
pub fn solve_problem1(scenario: &Scenario, tol: f64) -> Result<Solution> {
    let market = Market::new(scenario)?;
    let settings = SolverSettings {
        tol,
        ..SolverSettings::default()
    };
    solve_problem1_market(&market, scenario, &settings)
}

pub fn solve_problem1_market(market: &Market, scenario: &Scenario, settings: &SolverSettings) -> Result<Solution> {
    let terms: Vec<Term> = market
        .groups
        .iter()
        .map(|g| Term::Utility(g.params.utility))
        .collect();
    let active = vec![true; terms.len()];
    finish(market, scenario, &terms, &active, settings)
}

/// Payment-weighted proportional fairness: maximizes
/// `sum w_{n,l} ln x_{n,l}` minus OPEX. Groups with zero payment get nothing.
pub fn solve_problem3(
    scenario: &Scenario,
    payments: &BTreeMap<(SliceId, AreaId), f64>,
) -> Result<Solution> {
    let market = Market::new(scenario)?;
    solve_problem3_market(&market, scenario, payments, &SolverSettings::default())
}

pub fn solve_problem3_market(
    market: &Market,
    scenario: &Scenario,
    payments: &BTreeMap<(SliceId, AreaId), f64>,
    settings: &SolverSettings,
) -> Result<Solution> {
    let weights: Vec<f64> = market
        .groups
        .iter()
        .map(|g| payments.get(&(g.slice, g.area)).copied().unwrap_or(0.0))
        .collect();
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(crate::Error::Domain("payments must be non-negative".into()));
    }
    let terms: Vec<Term> = weights.iter().map(|&w| Term::Log(w)).collect();
    let active: Vec<bool> = weights.iter().map(|&w| w > 0.0).collect();
    finish(market, scenario, &terms, &active, settings)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvyWitness {
    pub area: AreaId,
    /// The envious slice.
    pub slice: SliceId,
    /// The envied slice and the path it uses.
    pub other: SliceId,
    pub path: PathId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharingWitness {
    pub slice: SliceId,
    pub path: PathId,
    /// `x / x_uniform`, below one for a violation.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyReport {
    pub envy_free: bool,
    pub envy_witness: Option<EnvyWitness>,
    pub sharing_incentive: bool,
    pub worst_sharing: Option<SharingWitness>,
    pub welfare: f64,
}

/// Slice `n` envies `m` in an area when, on some path `m` uses, `m` holds
/// strictly more payment-normalized resources than `n` on every demanded
/// resource of every node.
pub fn check_envy_freeness(
    allocation: &AllocationState,
    payments: &BidMatrix,
    scenario: &Scenario,
) -> Result<Option<EnvyWitness>> {
    let topo = &scenario.topology;
    for area in 0..topo.areas {
        let area = AreaId(area);
        let members: Vec<_> = scenario
            .slices
            .iter()
            .filter(|s| s.area(area).is_some())
            .collect();
        for n in &members {
            let wn = payments.area_total(n.id, area);
            let xn = allocation.area_traffic(n.id, area);
            if !(wn > 0.0) {
                continue;
            }
            for m in &members {
                if m.id == n.id {
                    continue;
                }
                let wm = payments.area_total(m.id, area);
                let xm = allocation.area_traffic(m.id, area);
                if !(wm > 0.0) {
                    continue;
                }
                for path in topo.paths_in_area(area) {
                    if !(allocation.path_traffic(m.id, path.id) > 0.0) {
                        continue;
                    }
                    let mut all_strict = true;
                    let mut any_compared = false;
                    'nodes: for &i in &path.nodes {
                        let dn = n.require_demand(path.id, i)?;
                        let dm = m.require_demand(path.id, i)?;
                        for (a, b) in dn.0.iter().zip(&dm.0) {
                            if *a == 0.0 && *b == 0.0 {
                                continue;
                            }
                            any_compared = true;
                            let own = xn * a / wn;
                            let theirs = xm * b / wm;
                            if !(own < theirs * (1.0 - FAIRNESS_SLACK)) {
                                all_strict = false;
                                break 'nodes;
                            }
                        }
                    }
                    if all_strict && any_compared {
                        return Ok(Some(EnvyWitness {
                            area,
                            slice: n.id,
                            other: m.id,
                            path: path.id,
                        }));
                    }
                }
            }
        }
    }
    Ok(None)
}

/// Uniform comparator at an equilibrium: each node's sold fraction is the
/// load it carries and slices share it in proportion to their payments.
pub fn equilibrium_uniform_spec(
    allocation: &AllocationState,
    payments: &BidMatrix,
    scenario: &Scenario,
) -> Result<UniformAllocationSpec> {
    let topo = &scenario.topology;
    let mut totals: Vec<Vec<f64>> = topo
        .nodes
        .iter()
        .map(|n| vec![0.0; n.resource_count()])
        .collect();
    for ((_, i), a) in allocation.node_alloc() {
        for (t, v) in totals[i.0].iter_mut().zip(a.iter()) {
            *t += v;
        }
    }
    let eta = topo
        .nodes
        .iter()
        .zip(&totals)
        .map(|(n, t)| {
            t.iter()
                .zip(n.capacity.iter())
                .map(|(l, c)| (l / c).min(1.0))
                .collect::<Vec<f64>>()
                .into()
        })
        .collect();
    Ok(UniformAllocationSpec::new(eta, payments.per_path_node.clone(), topo))
}

/// Every path carrying payment gets at least its payment-share of the
/// equilibrium's sold resources. Returns the worst shortfall, if any.
pub fn check_sharing_incentive(
    allocation: &AllocationState,
    payments: &BidMatrix,
    scenario: &Scenario,
) -> Result<Option<SharingWitness>> {
    let spec = equilibrium_uniform_spec(allocation, payments, scenario)?;
    let uni = uniform_allocation(scenario, &spec)?;
    sharing_shortfall(allocation.x_path(), uni.x_path(), |n, p| {
        scenario.topology.paths[p.0]
            .nodes
            .iter()
            .any(|&i| payments.path_node_total(n, p, i) > 0.0)
    })
}

/// Worst path whose traffic falls short of its uniform comparator.
pub(crate) fn sharing_shortfall(
    x: &PathTraffic,
    uniform: &PathTraffic,
    eligible: impl Fn(SliceId, PathId) -> bool,
) -> Result<Option<SharingWitness>> {
    let mut worst: Option<SharingWitness> = None;
    for (&(n, p), &xu) in uniform {
        if !(xu > 0.0) || !eligible(n, p) {
            continue;
        }
        let xv = x.get(&(n, p)).copied().unwrap_or(0.0);
        if xv < xu * (1.0 - FAIRNESS_SLACK) {
            let ratio = xv / xu;
            if worst.as_ref().map_or(true, |w| ratio < w.ratio) {
                worst = Some(SharingWitness {
                    slice: n,
                    path: p,
                    ratio,
                });
            }
        }
    }
    Ok(worst)
}

pub fn property_report(
    allocation: &AllocationState,
    payments: &BidMatrix,
    scenario: &Scenario,
) -> Result<PropertyReport> {
    let envy = check_envy_freeness(allocation, payments, scenario)?;
    let sharing = check_sharing_incentive(allocation, payments, scenario)?;
    Ok(PropertyReport {
        envy_free: envy.is_none(),
        envy_witness: envy,
        sharing_incentive: sharing.is_none(),
        worst_sharing: sharing,
        welfare: welfare(allocation, scenario)?,
    })
}

/// Grid search over each slice's unilateral deviations at fixed prices.
/// Every path of the slice ranges over `0, step, 2 step, ..., x_max`.
/// Returns true when no deviation beats the current payoff by more than `tol`.
pub fn brute_force_ne_check(
    scenario: &Scenario,
    allocation: &AllocationState,
    prices: &PriceTable,
    x_max: f64,
    step: f64,
    tol: f64,
) -> Result<bool> {
    let topo = &scenario.topology;
    if scenario.slices.len() > 3 {
        return Err(structural("brute-force check supports at most 3 slices"));
    }
    let points = (x_max / step).round() as usize + 1;
    for slice in &scenario.slices {
        let paths: Vec<PathId> = slice
            .areas
            .iter()
            .flat_map(|sa| topo.paths_in_area(sa.area).map(|p| p.id))
            .collect();
        if paths.len() > 4 {
            return Err(structural("brute-force check supports at most 4 paths"));
        }
        let own: PathTraffic = paths
            .iter()
            .map(|&p| ((slice.id, p), allocation.path_traffic(slice.id, p)))
            .collect();
        let base = payoff(slice, &own, prices, topo)?;
        let mut idx = vec![0usize; paths.len()];
        loop {
            let candidate: PathTraffic = paths
                .iter()
                .zip(&idx)
                .map(|(&p, &k)| ((slice.id, p), k as f64 * step))
                .collect();
            if let Revenue::Finite(v) = payoff(slice, &candidate, prices, topo)? {
                let better = match base {
                    Revenue::Finite(b) => v > b + tol * b.abs().max(1.0),
                    Revenue::MinusInfinity => true,
                };
                if better {
                    return Ok(false);
                }
            }
            // Odometer increment.
            let mut pos = 0;
            loop {
                if pos == idx.len() {
                    break;
                }
                idx[pos] += 1;
                if idx[pos] < points {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
            if pos == idx.len() {
                break;
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drp::{run_auction, DrpConfig};
    use crate::fixtures::{counter_example, single_node};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn price_table(s: &Scenario, ran_mu: f64) -> PriceTable {
        let mut p = PriceTable::at_opex(&s.topology);
        p.mu[0].0[0] = ran_mu;
        p
    }

    fn at(s: &Scenario, xs: &[f64]) -> AllocationState {
        let x: PathTraffic = xs
            .iter()
            .enumerate()
            .map(|(n, &v)| ((SliceId(n), PathId(0)), v))
            .collect();
        AllocationState::from_paths(x, s).unwrap()
    }

    fn area_payments(pairs: &[f64]) -> BTreeMap<(SliceId, AreaId), f64> {
        pairs
            .iter()
            .enumerate()
            .map(|(n, &w)| ((SliceId(n), AreaId(0)), w))
            .collect()
    }

    #[test]
    fn problem1_single_node() {
        let s = single_node(10.0, &[20.0]);
        let sol = solve_problem1(&s, 1e-10).unwrap();
        let x = sol.allocation.path_traffic(SliceId(0), PathId(0));
        assert_relative_eq!(x, 10.0, max_relative = 1e-6);
        assert_relative_eq!(sol.certificate.lambda[0], 1.0, max_relative = 1e-5);
        assert!(sol.certificate.passes(1e-5), "{:?}", sol.certificate);
    }

    #[test]
    fn problem1_interior() {
        let s = single_node(30.0, &[20.0]);
        let sol = solve_problem1(&s, 1e-10).unwrap();
        assert_relative_eq!(sol.allocation.path_traffic(SliceId(0), PathId(0)), 20.0, max_relative = 1e-6);
        assert!(sol.certificate.lambda[0] < 1e-6);
    }

    #[test]
    fn problem1_symmetric_slices() {
        let s = single_node(10.0, &[20.0, 20.0]);
        let sol = solve_problem1(&s, 1e-10).unwrap();
        for n in 0..2 {
            assert_relative_eq!(sol.allocation.path_traffic(SliceId(n), PathId(0)), 5.0, max_relative = 1e-6);
        }
    }

    #[test]
    fn certificate_at_exact_fixture() {
        let s = single_node(10.0, &[20.0]);
        let prices = price_table(&s, 2.0);
        let c = kkt_residual(&at(&s, &[10.0]), &prices, &s).unwrap();
        assert!(c.combined() <= 1e-12, "{c:?}");
        assert_relative_eq!(c.lambda[0], 1.0);

        let c = kkt_residual(&at(&s, &[10.1]), &prices, &s).unwrap();
        assert!(c.stationarity > 0.0);
        assert_relative_eq!(c.primal, 0.1, max_relative = 1e-9);
        let c = kkt_residual(&at(&s, &[9.9]), &prices, &s).unwrap();
        assert!(c.combined() > 0.0);

        let c = kkt_residual(&at(&s, &[11.0]), &prices, &s).unwrap();
        assert_relative_eq!(c.primal, 1.0, max_relative = 1e-9);
    }

    #[test]
    fn problem3_single_node() {
        let s = single_node(10.0, &[20.0]);
        let sol = solve_problem3(&s, &area_payments(&[20.0])).unwrap();
        assert_relative_eq!(sol.allocation.path_traffic(SliceId(0), PathId(0)), 10.0, max_relative = 1e-6);
    }

    #[test]
    fn problem3_weighted_split() {
        let s = single_node(10.0, &[20.0, 20.0]);
        let sol = solve_problem3(&s, &area_payments(&[30.0, 15.0])).unwrap();
        let a = sol.allocation.path_traffic(SliceId(0), PathId(0));
        let b = sol.allocation.path_traffic(SliceId(1), PathId(0));
        assert_relative_eq!(a / b, 2.0, max_relative = 1e-6);
        assert_relative_eq!(a + b, 10.0, max_relative = 1e-6);
    }

    #[test]
    fn problem3_zero_weights() {
        let s = single_node(10.0, &[20.0, 20.0]);
        let sol = solve_problem3(&s, &area_payments(&[0.0, 0.0])).unwrap();
        assert_eq!(sol.allocation.total_traffic(), 0.0);
        assert!(solve_problem3(&s, &area_payments(&[-1.0, 0.0])).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s = counter_example();
        let market = Market::new(&s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x: Vec<f64> = (0..market.routes.len()).map(|_| rng.gen_range(0.5..5.0)).collect();
            let g = problem1_gradient(&market, &x);
            for k in 0..x.len() {
                let h = 1e-5 * x[k];
                let mut up = x.clone();
                let mut dn = x.clone();
                up[k] += h;
                dn[k] -= h;
                let fd = (problem1_objective(&market, &up) - problem1_objective(&market, &dn)) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-5 * g[k].abs().max(1e-3), "{fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn envy_detects_doubled_bundle() {
        let s = single_node(10.0, &[20.0, 20.0]);
        let out = run_auction(&s, &DrpConfig { epsilon: 1e-7, ..DrpConfig::default() }).unwrap();
        assert!(check_envy_freeness(&out.allocation, &out.bids, &s).unwrap().is_none());
        assert!(check_sharing_incentive(&out.allocation, &out.bids, &s).unwrap().is_none());

        let skewed = at(&s, &[2.5, 5.0]);
        let w = check_envy_freeness(&skewed, &out.bids, &s).unwrap().unwrap();
        assert_eq!((w.slice, w.other), (SliceId(0), SliceId(1)));
    }

    #[test]
    fn sharing_single_slice() {
        let s = single_node(10.0, &[20.0]);
        let out = run_auction(&s, &DrpConfig::default()).unwrap();
        let report = property_report(&out.allocation, &out.bids, &s).unwrap();
        assert!(report.sharing_incentive && report.envy_free);
    }

    #[test]
    fn brute_force_examples() {
        let s = single_node(10.0, &[20.0]);
        let prices = price_table(&s, 2.0);
        assert!(brute_force_ne_check(&s, &at(&s, &[10.0]), &prices, 20.0, 0.01, 1e-9).unwrap());
        assert!(!brute_force_ne_check(&s, &at(&s, &[9.0]), &prices, 20.0, 0.01, 1e-9).unwrap());
        let mut empty = s.clone();
        empty.slices.clear();
        assert!(brute_force_ne_check(&empty, &AllocationState::empty(), &prices, 20.0, 0.01, 1e-9).unwrap());
    }
}
