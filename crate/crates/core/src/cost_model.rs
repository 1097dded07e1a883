//! Retailer wholesale cost curves.
//!
//! A [`CostCurve`] stores the marginal cost of supply as a piecewise-linear,
//! non-decreasing function of quantity with a hard capacity cap. Repeating a
//! quantity in the breakpoint list encodes a jump (a step in a merit-order
//! staircase). Total cost, average cost and the two inverse queries are
//! derived in closed form from those breakpoints.
//!
//! Conventions: quantities in MWh, rates in $/MWh, money in $. Above the
//! capacity every query returns `f64::INFINITY`.
//!
//! At a jump the marginal cost is reported as the left limit (the cheaper
//! side), except at `q = 0` where it is the first listed rate. Use
//! [`CostCurve::marginal_limits`] when both sides matter.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurveError {
    #[error("cost curve needs at least one breakpoint")]
    Empty,
    #[error("first breakpoint must sit at quantity 0, found {0}")]
    FirstNotAtZero(f64),
    #[error("breakpoint {index} has a non-finite or negative value")]
    InvalidValue { index: usize },
    #[error("breakpoint quantities must be non-decreasing (index {index})")]
    QuantityOrder { index: usize },
    #[error("marginal rates must be non-decreasing (index {index})")]
    RateOrder { index: usize },
    #[error("a jump at quantity 0 is not representable; list a single rate there")]
    JumpAtZero,
    #[error("capacity must be positive and finite, got {0}")]
    Capacity(f64),
    #[error("quantity {0} is outside the domain [0, inf)")]
    Domain(f64),
}

/// One corner of the marginal cost curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub quantity: f64,
    pub marginal_rate: f64,
}

impl Breakpoint {
    pub fn new(quantity: f64, marginal_rate: f64) -> Self {
        Self {
            quantity,
            marginal_rate,
        }
    }
}

/// Serialized form of a curve; validated on the way in.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostCurveSpec {
    pub breakpoints: Vec<Breakpoint>,
    pub capacity: f64,
}

/// Whether the marginal cost is strictly increasing on `[0, capacity]`,
/// i.e. whether the total cost is strictly convex there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrictnessFlag {
    pub strictly_increasing_marginal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CostCurveSpec", into = "CostCurveSpec")]
pub struct CostCurve {
    breakpoints: Vec<Breakpoint>,
    capacity: f64,
    /// Total cost at each breakpoint quantity.
    cumulative: Vec<f64>,
}

impl TryFrom<CostCurveSpec> for CostCurve {
    type Error = CurveError;

    fn try_from(spec: CostCurveSpec) -> Result<Self, Self::Error> {
        CostCurve::new(spec.breakpoints, spec.capacity)
    }
}

impl From<CostCurve> for CostCurveSpec {
    fn from(curve: CostCurve) -> Self {
        CostCurveSpec {
            breakpoints: curve.breakpoints,
            capacity: curve.capacity,
        }
    }
}

impl CostCurve {
    pub fn new(breakpoints: Vec<Breakpoint>, capacity: f64) -> Result<Self, CurveError> {
        let first = breakpoints.first().ok_or(CurveError::Empty)?;
        if first.quantity != 0.0 {
            return Err(CurveError::FirstNotAtZero(first.quantity));
        }
        if !(capacity.is_finite() && capacity > 0.0) {
            return Err(CurveError::Capacity(capacity));
        }
        for (index, bp) in breakpoints.iter().enumerate() {
            let ok = bp.quantity.is_finite()
                && bp.marginal_rate.is_finite()
                && bp.quantity >= 0.0
                && bp.marginal_rate >= 0.0;
            if !ok {
                return Err(CurveError::InvalidValue { index });
            }
        }
        for (index, pair) in breakpoints.windows(2).enumerate() {
            if pair[1].quantity < pair[0].quantity {
                return Err(CurveError::QuantityOrder { index: index + 1 });
            }
            if pair[1].marginal_rate < pair[0].marginal_rate {
                return Err(CurveError::RateOrder { index: index + 1 });
            }
        }
        if breakpoints.len() > 1 && breakpoints[1].quantity == 0.0 {
            return Err(CurveError::JumpAtZero);
        }

        let mut cumulative = Vec::with_capacity(breakpoints.len());
        cumulative.push(0.0);
        for pair in breakpoints.windows(2) {
            let width = pair[1].quantity - pair[0].quantity;
            let area = width * 0.5 * (pair[0].marginal_rate + pair[1].marginal_rate);
            let prev = *cumulative.last().unwrap();
            cumulative.push(prev + area);
        }

        Ok(Self {
            breakpoints,
            capacity,
            cumulative,
        })
    }

    /// Constant marginal cost `rate` up to `capacity`.
    pub fn flat(rate: f64, capacity: f64) -> Result<Self, CurveError> {
        Self::new(vec![Breakpoint::new(0.0, rate)], capacity)
    }

    /// Linear marginal cost `intercept + slope * q`, i.e. a quadratic total cost.
    pub fn linear(intercept: f64, slope: f64, capacity: f64) -> Result<Self, CurveError> {
        Self::new(
            vec![
                Breakpoint::new(0.0, intercept),
                Breakpoint::new(capacity, intercept + slope * capacity),
            ],
            capacity,
        )
    }

    /// Merit-order staircase modelled on a hypothetical wholesale market:
    /// hydro, nuclear, coal, natural gas and two oil tranches over a
    /// 60000 MWh capacity, topping out just under 100 $/MWh.
    ///
    /// Every tread rises with a positive slope, so the curve is strictly
    /// increasing and [`CostCurve::strictness`] reports `true`.
    pub fn merit_order_preset() -> Self {
        let points = [
            (0.0, 16.67),
            (5000.0, 17.39),
            (5000.0, 25.72),
            (20000.0, 28.30),
            (20000.0, 36.63),
            (35000.0, 39.93),
            (35000.0, 48.27),
            (50000.0, 52.51),
            (50000.0, 69.17),
            (55000.0, 70.84),
            (55000.0, 87.51),
            (60000.0, 89.32),
        ];
        let bps = points.iter().map(|&(q, r)| Breakpoint::new(q, r)).collect();
        Self::new(bps, 60000.0).expect("preset is valid")
    }

    /// Looks up a named preset.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "merit-order" => Some(Self::merit_order_preset()),
            _ => None,
        }
    }

    pub fn breakpoints(&self) -> &[Breakpoint] {
        &self.breakpoints
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    /// Marginal cost at zero supply, the participation threshold.
    pub fn base_rate(&self) -> f64 {
        self.breakpoints[0].marginal_rate
    }

    /// Marginal cost at full capacity (left limit).
    pub fn peak_rate(&self) -> f64 {
        self.marginal_unchecked(self.capacity)
    }

    pub fn strictness(&self) -> StrictnessFlag {
        let bps = &self.breakpoints;
        let mut strict = true;
        for pair in bps.windows(2) {
            if pair[0].quantity >= self.capacity {
                break;
            }
            let rises = pair[1].marginal_rate > pair[0].marginal_rate;
            if !rises {
                strict = false;
                break;
            }
        }
        // flat tail between the last breakpoint and the capacity
        if bps.last().unwrap().quantity < self.capacity {
            strict = false;
        }
        StrictnessFlag {
            strictly_increasing_marginal: strict,
        }
    }

    pub fn is_strict(&self) -> bool {
        self.strictness().strictly_increasing_marginal
    }

    /// Quantities at which the marginal cost jumps, below capacity.
    pub fn jump_points(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .breakpoints
            .windows(2)
            .filter(|p| p[0].quantity == p[1].quantity && p[1].marginal_rate > p[0].marginal_rate)
            .map(|p| p[0].quantity)
            .filter(|&q| q < self.capacity)
            .collect();
        out.dedup();
        out
    }

    /// Distinct breakpoint quantities strictly inside `(0, capacity)`.
    pub fn kink_points(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .breakpoints
            .iter()
            .map(|b| b.quantity)
            .filter(|&q| q > 0.0 && q < self.capacity)
            .collect();
        out.dedup();
        out
    }

    fn check_domain(q: f64) -> Result<(), CurveError> {
        if q.is_nan() || q < 0.0 {
            Err(CurveError::Domain(q))
        } else {
            Ok(())
        }
    }

    pub fn marginal_cost(&self, q: f64) -> Result<f64, CurveError> {
        Self::check_domain(q)?;
        Ok(self.marginal_unchecked(q))
    }

    pub fn total_cost(&self, q: f64) -> Result<f64, CurveError> {
        Self::check_domain(q)?;
        Ok(self.total_unchecked(q))
    }

    /// `C(q)/q`, with the right limit `C'(0)` at `q = 0`.
    pub fn average_cost(&self, q: f64) -> Result<f64, CurveError> {
        Self::check_domain(q)?;
        Ok(self.average_unchecked(q))
    }

    pub(crate) fn marginal_unchecked(&self, q: f64) -> f64 {
        if q > self.capacity {
            return f64::INFINITY;
        }
        if q <= 0.0 {
            return self.base_rate();
        }
        let bps = &self.breakpoints;
        let j = bps.partition_point(|b| b.quantity < q);
        if j == bps.len() {
            return bps[j - 1].marginal_rate;
        }
        interpolate(&bps[j - 1], &bps[j], q)
    }

    /// Left and right limits of the marginal cost at `q`. The right limit at
    /// or beyond capacity is infinite.
    pub fn marginal_limits(&self, q: f64) -> (f64, f64) {
        let left = if q <= 0.0 {
            self.base_rate()
        } else {
            self.marginal_unchecked(q)
        };
        if q >= self.capacity {
            return (left, f64::INFINITY);
        }
        let bps = &self.breakpoints;
        let j = bps.partition_point(|b| b.quantity <= q.max(0.0));
        let right = if j == bps.len() {
            bps[j - 1].marginal_rate
        } else {
            interpolate(&bps[j - 1], &bps[j], q.max(0.0))
        };
        (left, right)
    }

    /// Left and right slopes of the marginal cost at `q` (zero on the tail).
    pub fn marginal_slopes(&self, q: f64) -> (f64, f64) {
        let bps = &self.breakpoints;
        let slope_of = |k: usize| -> f64 {
            if k + 1 >= bps.len() {
                return 0.0;
            }
            let w = bps[k + 1].quantity - bps[k].quantity;
            if w > 0.0 {
                (bps[k + 1].marginal_rate - bps[k].marginal_rate) / w
            } else {
                0.0
            }
        };
        let left = if q <= 0.0 {
            slope_of(0)
        } else {
            let j = bps.partition_point(|b| b.quantity < q);
            slope_of(j - 1)
        };
        let j = bps.partition_point(|b| b.quantity <= q.max(0.0));
        let right = slope_of(j - 1);
        (left, right)
    }

    pub(crate) fn total_unchecked(&self, q: f64) -> f64 {
        if q > self.capacity {
            return f64::INFINITY;
        }
        if q <= 0.0 {
            return 0.0;
        }
        let bps = &self.breakpoints;
        let j = bps.partition_point(|b| b.quantity < q);
        let start = &bps[j - 1];
        let start_cost = self.cumulative[j - 1];
        let width = q - start.quantity;
        if j == bps.len() {
            return start_cost + width * start.marginal_rate;
        }
        let end_rate = interpolate(start, &bps[j], q);
        start_cost + width * 0.5 * (start.marginal_rate + end_rate)
    }

    pub(crate) fn average_unchecked(&self, q: f64) -> f64 {
        if q > self.capacity {
            return f64::INFINITY;
        }
        if q <= 0.0 {
            return self.base_rate();
        }
        self.total_unchecked(q) / q
    }

    /// Largest `q <= capacity` whose marginal cost does not exceed `rate`;
    /// zero when even the first unit costs more than `rate`.
    pub fn inverse_marginal(&self, rate: f64) -> f64 {
        if rate.is_nan() || rate < self.base_rate() {
            return 0.0;
        }
        let bps = &self.breakpoints;
        for pair in bps.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if a.quantity >= self.capacity {
                return self.capacity;
            }
            if b.marginal_rate <= rate {
                continue;
            }
            // crossing happens in (a.quantity, b.quantity]
            let q = if a.marginal_rate > rate || b.quantity == a.quantity {
                a.quantity
            } else {
                let slope = (b.marginal_rate - a.marginal_rate) / (b.quantity - a.quantity);
                a.quantity + (rate - a.marginal_rate) / slope
            };
            return q.min(self.capacity);
        }
        // flat tail at the last rate, which is <= rate here
        self.capacity
    }

    /// Largest `q <= capacity` with `A(q) <= rate`; zero when `rate < C'(0)`.
    ///
    /// Works on `g(q) = C(q) - rate * q`, which is convex with `g(0) = 0`, so
    /// `{g <= 0}` is an interval `[0, q*]`; on each linear piece of the
    /// marginal curve `g` is quadratic and the crossing is solved exactly.
    pub fn inverse_average(&self, rate: f64) -> f64 {
        if rate.is_nan() || rate < self.base_rate() {
            return 0.0;
        }
        let bps = &self.breakpoints;
        let tol = |q: f64| 1e-12 * (1.0 + rate * q);
        for (k, pair) in bps.windows(2).enumerate() {
            let (a, b) = (&pair[0], &pair[1]);
            if a.quantity >= self.capacity {
                return self.capacity;
            }
            let width = b.quantity - a.quantity;
            if width == 0.0 {
                continue;
            }
            let g_start = self.cumulative[k] - rate * a.quantity;
            let g_end = self.cumulative[k + 1] - rate * b.quantity;
            if g_end <= tol(b.quantity) {
                continue;
            }
            let lin = a.marginal_rate - rate;
            let slope = (b.marginal_rate - a.marginal_rate) / width;
            let d = quadratic_crossing(0.5 * slope, lin, g_start.min(0.0));
            return (a.quantity + d.clamp(0.0, width)).min(self.capacity);
        }
        let last = bps.len() - 1;
        let tail_rate = bps[last].marginal_rate;
        if tail_rate <= rate {
            return self.capacity;
        }
        let g_start = (self.cumulative[last] - rate * bps[last].quantity).min(0.0);
        let q = bps[last].quantity + (-g_start) / (tail_rate - rate);
        q.min(self.capacity)
    }
}

fn interpolate(a: &Breakpoint, b: &Breakpoint, q: f64) -> f64 {
    let width = b.quantity - a.quantity;
    if width <= 0.0 {
        return a.marginal_rate;
    }
    let t = ((q - a.quantity) / width).clamp(0.0, 1.0);
    a.marginal_rate + t * (b.marginal_rate - a.marginal_rate)
}

/// Positive root of `a d^2 + b d + c = 0` with `a >= 0`, `c <= 0`.
fn quadratic_crossing(a: f64, b: f64, c: f64) -> f64 {
    if a == 0.0 {
        return if b > 0.0 { -c / b } else { 0.0 };
    }
    let disc = (b * b - 4.0 * a * c).max(0.0);
    let root = disc.sqrt();
    if b >= 0.0 {
        if b + root == 0.0 {
            0.0
        } else {
            -2.0 * c / (b + root)
        }
    } else {
        (-b + root) / (2.0 * a)
    }
}
