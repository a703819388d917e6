//! Slice utility family `U'(z) = (phi/z)^alpha`, the queueing delay model,
//! delay-adjusted revenue and the per-slice payoff at given prices.

use std::ops::{Add, Mul};

use serde::{Deserialize, Serialize};

use crate::drp::PriceTable;
use crate::error::{structural, Error, Result};
use crate::model::{path_unit_cost, PathTraffic, SliceSpec, Topology};

/// Utility reference point as a fraction of `phi`: `U(phi * Z0_FRACTION) = 0`.
pub const Z0_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityParams {
    /// Traffic-demand scale (Gb/s).
    pub phi: f64,
    pub alpha: f64,
}

impl UtilityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(Error::Domain(format!("phi must be positive, got {}", self.phi)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Domain(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }

    pub fn reference_point(&self) -> f64 {
        self.phi * Z0_FRACTION
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayParams {
    /// Average packet length (bits).
    pub packet_length: f64,
    /// Number of processing steps per packet.
    pub steps: f64,
    /// Weight converting delay into lost profit.
    pub beta: f64,
}

impl Default for DelayParams {
    fn default() -> Self {
        DelayParams {
            packet_length: 12000.0,
            steps: 3.0,
            beta: 0.0,
        }
    }
}

impl DelayParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.packet_length > 0.0) || !(self.steps >= 0.0) || !(self.beta >= 0.0) {
            return Err(Error::Domain(
                "delay parameters need L > 0, h >= 0 and beta >= 0".into(),
            ));
        }
        Ok(())
    }
}

pub fn marginal_utility(params: &UtilityParams, z: f64) -> Result<f64> {
    if !(z > 0.0) {
        return Err(Error::Domain(format!("marginal utility needs z > 0, got {z}")));
    }
    Ok((params.phi / z).powf(params.alpha))
}

pub fn inverse_marginal(params: &UtilityParams, y: f64) -> Result<f64> {
    if !(y > 0.0) {
        return Err(Error::Domain(format!("inverse marginal needs y > 0, got {y}")));
    }
    Ok(params.phi * y.powf(-1.0 / params.alpha))
}

/// `U(z) - U(z0)` for an explicit reference point `z0`. At `z = 0` the result
/// is `-inf` when `alpha >= 1` and finite otherwise.
pub fn utility_with_reference(params: &UtilityParams, z: f64, z0: f64) -> f64 {
    let UtilityParams { phi, alpha } = *params;
    if (alpha - 1.0).abs() < 1e-12 {
        if z <= 0.0 {
            return f64::NEG_INFINITY;
        }
        return phi * (z / z0).ln();
    }
    let e = 1.0 - alpha;
    if z <= 0.0 && e <= 0.0 {
        return f64::NEG_INFINITY;
    }
    phi.powf(alpha) * (z.max(0.0).powf(e) - z0.powf(e)) / e
}

pub fn utility_value(params: &UtilityParams, z: f64) -> Result<f64> {
    if !(z > 0.0) {
        return Err(Error::Domain(format!("utility needs z > 0, got {z}")));
    }
    Ok(utility_with_reference(params, z, params.reference_point()))
}

/// End-to-end delay (seconds), or [`Delay::Infinite`] once the provisioned
/// capacity no longer exceeds the offered load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Delay {
    Finite(f64),
    Infinite,
}

impl Delay {
    pub fn value(self) -> Option<f64> {
        match self {
            Delay::Finite(v) => Some(v),
            Delay::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Delay::Infinite)
    }
}

impl Add for Delay {
    type Output = Delay;

    fn add(self, rhs: Delay) -> Delay {
        match (self, rhs) {
            (Delay::Finite(a), Delay::Finite(b)) => Delay::Finite(a + b),
            _ => Delay::Infinite,
        }
    }
}

impl Mul<f64> for Delay {
    type Output = Delay;

    fn mul(self, rhs: f64) -> Delay {
        match self {
            Delay::Finite(a) => Delay::Finite(a * rhs),
            Delay::Infinite => Delay::Infinite,
        }
    }
}

/// `D = L/(x - load) + h L / x` for offered load `load` on capacity `x`.
pub fn delay_at_load(dparams: &DelayParams, load: f64, x: f64) -> Delay {
    if !(x > load) || !(x > 0.0) {
        return Delay::Infinite;
    }
    let l = dparams.packet_length;
    Delay::Finite(l / (x - load) + dparams.steps * l / x)
}

/// Delay when the offered load equals the slice's demand scale `phi`.
pub fn delay(dparams: &DelayParams, params: &UtilityParams, x: f64) -> Delay {
    delay_at_load(dparams, params.phi, x)
}

/// Revenue `U - beta * D`, which is `-inf` inside the delay pole when `beta > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Revenue {
    Finite(f64),
    MinusInfinity,
}

impl Revenue {
    pub fn from_f64(v: f64) -> Revenue {
        if v == f64::NEG_INFINITY {
            Revenue::MinusInfinity
        } else {
            Revenue::Finite(v)
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Revenue::Finite(v) => Some(v),
            Revenue::MinusInfinity => None,
        }
    }
}

impl Add<f64> for Revenue {
    type Output = Revenue;

    fn add(self, rhs: f64) -> Revenue {
        match self {
            Revenue::Finite(a) => Revenue::Finite(a + rhs),
            Revenue::MinusInfinity => Revenue::MinusInfinity,
        }
    }
}

pub fn net_revenue(params: &UtilityParams, dparams: &DelayParams, x: f64) -> Result<Revenue> {
    let u = utility_value(params, x)?;
    if dparams.beta == 0.0 {
        return Ok(Revenue::Finite(u));
    }
    Ok(match delay(dparams, params, x) {
        Delay::Finite(d) => Revenue::Finite(u - dparams.beta * d),
        Delay::Infinite => Revenue::MinusInfinity,
    })
}

/// Total payment of `slice` for its traffic in `x_path` at `prices`.
pub fn payment(
    slice: &SliceSpec,
    x_path: &PathTraffic,
    prices: &PriceTable,
    topology: &Topology,
) -> Result<f64> {
    let mut total = 0.0;
    for (&(n, p), &x) in x_path {
        if n != slice.id || x == 0.0 {
            continue;
        }
        total += x * path_unit_cost(topology, p, slice, prices)?;
    }
    Ok(total)
}

/// Utility summed over the slice's areas minus its payment.
pub fn payoff(
    slice: &SliceSpec,
    x_path: &PathTraffic,
    prices: &PriceTable,
    topology: &Topology,
) -> Result<Revenue> {
    if x_path.values().any(|v| !(*v >= 0.0)) {
        return Err(Error::Domain("negative traffic in payoff".into()));
    }
    let mut totals = vec![0.0; topology.areas];
    for (&(n, p), &x) in x_path {
        if n != slice.id {
            continue;
        }
        let area = topology.path(p)?.area;
        if slice.area(area).is_none() {
            return Err(structural(format!(
                "slice {} carries traffic in inactive area {area}",
                slice.id
            )));
        }
        totals[area.0] += x;
    }
    let mut u = 0.0;
    for sa in &slice.areas {
        u += utility_with_reference(&sa.utility, totals[sa.area.0], sa.utility.reference_point());
    }
    Ok(Revenue::from_f64(u) + (-payment(slice, x_path, prices, topology)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn up(phi: f64, alpha: f64) -> UtilityParams {
        UtilityParams { phi, alpha }
    }

    #[test]
    fn marginal_examples() {
        assert_eq!(marginal_utility(&up(10.0, 2.0), 10.0).unwrap(), 1.0);
        assert_eq!(marginal_utility(&up(10.0, 2.0), 5.0).unwrap(), 4.0);
        assert_eq!(marginal_utility(&up(10.0, 1.0), 20.0).unwrap(), 0.5);
        assert!(marginal_utility(&up(10.0, 1.0), 0.0).is_err());
        assert!(marginal_utility(&up(10.0, 1.0), -1.0).is_err());
    }

    #[test]
    fn inverse_examples() {
        assert_relative_eq!(inverse_marginal(&up(10.0, 2.0), 4.0).unwrap(), 5.0, max_relative = 1e-15);
        assert_eq!(inverse_marginal(&up(7.0, 1.3), 1.0).unwrap(), 7.0);
        assert_eq!(inverse_marginal(&up(20.0, 1.0), 2.0).unwrap(), 10.0);
        assert!(inverse_marginal(&up(20.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn utility_examples() {
        let p = up(10.0, 1.0);
        assert_eq!(utility_value(&p, p.reference_point()).unwrap(), 0.0);
        let q = up(3.0, 1.7);
        assert!(utility_value(&q, q.reference_point()).unwrap().abs() < 1e-12);
        assert_relative_eq!(
            utility_value(&p, 2.0 * p.reference_point()).unwrap(),
            10.0 * 2f64.ln(),
            max_relative = 1e-14
        );
        for p in [up(10.0, 1.0), up(10.0, 1.5), up(4.0, 2.0)] {
            let h = 1e-5;
            let fd = (utility_value(&p, 7.0 + h).unwrap() - utility_value(&p, 7.0 - h).unwrap())
                / (2.0 * h);
            assert_relative_eq!(fd, marginal_utility(&p, 7.0).unwrap(), max_relative = 1e-6);
        }
        assert!(utility_value(&p, 0.0).is_err());
    }

    #[test]
    fn delay_examples() {
        let d = DelayParams {
            packet_length: 1.0,
            steps: 3.0,
            beta: 0.0,
        };
        assert_relative_eq!(delay(&d, &up(10.0, 1.0), 12.0).value().unwrap(), 0.75);
        assert!(delay(&d, &up(10.0, 1.0), 10.0).is_infinite());
        assert!(delay(&d, &up(10.0, 1.0), 9.0).is_infinite());
        let d0 = DelayParams { steps: 0.0, ..d };
        assert_relative_eq!(delay(&d0, &up(10.0, 1.0), 20.0).value().unwrap(), 0.1);
    }

    #[test]
    fn delay_sentinel_absorbs_arithmetic() {
        assert_eq!(Delay::Infinite + Delay::Finite(1.0), Delay::Infinite);
        assert_eq!(Delay::Finite(1.0) + Delay::Infinite, Delay::Infinite);
        assert_eq!(Delay::Infinite * 0.5, Delay::Infinite);
        assert_eq!(Delay::Finite(1.0) + Delay::Finite(2.0), Delay::Finite(3.0));
        assert_eq!(Revenue::MinusInfinity + 5.0, Revenue::MinusInfinity);
    }

    #[test]
    fn revenue_examples() {
        let p = up(10.0, 1.0);
        let none = DelayParams::default();
        assert_eq!(
            net_revenue(&p, &none, 12.0).unwrap(),
            Revenue::Finite(utility_value(&p, 12.0).unwrap())
        );
        let d = DelayParams {
            packet_length: 1.0,
            steps: 3.0,
            beta: 1.0,
        };
        assert_eq!(net_revenue(&p, &d, 10.0).unwrap(), Revenue::MinusInfinity);
        let r = net_revenue(&p, &d, 12.0).unwrap().value().unwrap();
        assert_relative_eq!(r, utility_value(&p, 12.0).unwrap() - 0.75, max_relative = 1e-14);
    }

    #[test]
    fn payoff_single_path() {
        use crate::drp::PriceTable;
        use crate::fixtures::single_node;
        use crate::model::{PathId, SliceId};
        let s = single_node(10.0, &[20.0]);
        let mut prices = PriceTable::at_opex(&s.topology);
        prices.mu[0].0[0] = 2.0;
        let x: PathTraffic = [((SliceId(0), PathId(0)), 10.0)].into_iter().collect();
        let v = payoff(&s.slices[0], &x, &prices, &s.topology).unwrap().value().unwrap();
        // z0 = phi / 100
        assert_relative_eq!(v, 20.0 * (10.0f64 / 0.2).ln() - 20.0, max_relative = 1e-12);
        let zero: PathTraffic = [((SliceId(0), PathId(0)), 0.0)].into_iter().collect();
        assert_eq!(payoff(&s.slices[0], &zero, &prices, &s.topology).unwrap(), Revenue::MinusInfinity);
    }

    #[test]
    fn inverse_roundtrip_on_log_grid() {
        for p in [up(1.0, 1.0), up(13.0, 1.25), up(0.4, 2.0), up(50.0, 0.7)] {
            for k in 0..=120 {
                let y = 10f64.powf(-6.0 + 12.0 * k as f64 / 120.0);
                let back = marginal_utility(&p, inverse_marginal(&p, y).unwrap()).unwrap();
                assert!(((back - y) / y).abs() <= 1e-12, "y={y} back={back}");
            }
        }
    }

    proptest! {
        #[test]
        fn marginal_strictly_decreasing(phi in 0.1f64..100.0, alpha in 0.5f64..2.5,
                                        z in 0.01f64..100.0, dz in 1e-3f64..10.0) {
            let p = up(phi, alpha);
            prop_assert!(marginal_utility(&p, z + dz).unwrap() < marginal_utility(&p, z).unwrap());
        }

        #[test]
        fn utility_midpoint_concave(phi in 0.1f64..100.0, alpha in 0.5f64..2.5,
                                    z1 in 0.01f64..100.0, gap in 1e-3f64..100.0) {
            let p = up(phi, alpha);
            let z2 = z1 + gap;
            let mid = utility_value(&p, 0.5 * (z1 + z2)).unwrap();
            let avg = 0.5 * (utility_value(&p, z1).unwrap() + utility_value(&p, z2).unwrap());
            prop_assert!(mid >= avg - 1e-12 * mid.abs().max(1.0));
        }

        #[test]
        fn delay_decreasing_above_pole(phi in 0.1f64..100.0, x in 0.0f64..100.0, dx in 1e-3f64..10.0) {
            let d = DelayParams::default();
            let p = up(phi, 1.0);
            let a = delay(&d, &p, phi + 1e-3 + x).value().unwrap();
            let b = delay(&d, &p, phi + 1e-3 + x + dx).value().unwrap();
            prop_assert!(b < a);
        }
    }
}
