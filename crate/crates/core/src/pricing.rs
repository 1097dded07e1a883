//! Payment kernels for the two real-time pricing schemes.
//!
//! * Average-cost pricing charges every unit in a slot the same price
//!   `A(X) = C(X)/X`, so consumer `i` pays `x_i * A(X)`.
//! * Time-variant increasing-block pricing charges consumer `i` the integral
//!   of `M(x, x_t) = C'(sum_j min(x, x_j))` from 0 to `x_i`. Larger consumers
//!   climb further up the marginal curve.
//!
//! Both schemes are budget balanced: the payments in a slot add up to `C(X)`.
//!
//! The block integral is evaluated in closed form. With the rival demands
//! sorted ascending, the argument `h(s) = s + sum_j min(s, o_j)` is affine
//! between consecutive rival demands with slope `1 + #{j : o_j > s}`, so each
//! piece integrates to a difference of total costs divided by that slope.
//!
//! Derivatives are returned as [`Interval`]s: at a jump of the marginal cost
//! the payment has a kink and its subdifferential is the interval between the
//! one-sided derivatives.

use serde::{Deserialize, Serialize};

use crate::cost_model::CostCurve;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PricingScheme {
    AverageCost,
    IncreasingBlock,
}

impl PricingScheme {
    pub fn name(self) -> &'static str {
        match self {
            PricingScheme::AverageCost => "average_cost",
            PricingScheme::IncreasingBlock => "increasing_block",
        }
    }
}

/// Closed interval `[lo, hi]` of one-sided derivative values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn new(a: f64, b: f64) -> Self {
        Self {
            lo: a.min(b),
            hi: a.max(b),
        }
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    /// Distance from `v` to the interval, zero when contained.
    pub fn distance(&self, v: f64) -> f64 {
        if v < self.lo {
            self.lo - v
        } else if v > self.hi {
            v - self.hi
        } else {
            0.0
        }
    }

    pub fn shift(&self, by: f64) -> Self {
        Self {
            lo: self.lo + by,
            hi: self.hi + by,
        }
    }

    fn max_hi(self, hi: f64) -> Self {
        Self {
            lo: self.lo,
            hi: self.hi.max(hi),
        }
    }

    pub fn midpoint(&self) -> f64 {
        if self.hi.is_infinite() {
            self.lo
        } else {
            0.5 * (self.lo + self.hi)
        }
    }
}

/// Demands of all consumers in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotDemandView {
    demands: Vec<f64>,
    slot_sum: f64,
    sorted_order: Vec<usize>,
}

impl SlotDemandView {
    /// Builds the view; ties in the sort are broken by consumer index.
    pub fn new(demands: Vec<f64>) -> Self {
        let slot_sum = demands.iter().sum();
        let mut sorted_order: Vec<usize> = (0..demands.len()).collect();
        sorted_order.sort_by(|&a, &b| demands[a].total_cmp(&demands[b]).then(a.cmp(&b)));
        Self {
            demands,
            slot_sum,
            sorted_order,
        }
    }

    pub fn demands(&self) -> &[f64] {
        &self.demands
    }

    pub fn slot_sum(&self) -> f64 {
        self.slot_sum
    }

    pub fn sorted_order(&self) -> &[usize] {
        &self.sorted_order
    }

    pub fn len(&self) -> usize {
        self.demands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demands.is_empty()
    }

    /// The other consumers' demands, as seen by consumer `i`.
    pub fn rivals_of(&self, i: usize) -> RivalLoad {
        let sorted = self
            .sorted_order
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| self.demands[j])
            .collect();
        RivalLoad::from_sorted(sorted)
    }
}

/// Demands of every consumer except one, sorted ascending, with prefix sums.
#[derive(Debug, Clone, PartialEq)]
pub struct RivalLoad {
    sorted: Vec<f64>,
    /// `prefix[k] = sum of sorted[..k]`
    prefix: Vec<f64>,
}

impl RivalLoad {
    pub fn new(mut demands: Vec<f64>) -> Self {
        demands.sort_by(f64::total_cmp);
        Self::from_sorted(demands)
    }

    fn from_sorted(sorted: Vec<f64>) -> Self {
        let mut prefix = Vec::with_capacity(sorted.len() + 1);
        let mut acc = 0.0;
        prefix.push(acc);
        for &d in &sorted {
            acc += d;
            prefix.push(acc);
        }
        Self { sorted, prefix }
    }

    pub fn total(&self) -> f64 {
        *self.prefix.last().unwrap()
    }

    pub fn count(&self) -> usize {
        self.sorted.len()
    }

    /// `h(x) = x + sum_j min(x, o_j)`, the argument of the block marginal price.
    pub fn block_argument(&self, x: f64) -> f64 {
        let k = self.sorted.partition_point(|&o| o < x);
        let above = (self.count() - k) as f64;
        self.prefix[k] + (above + 1.0) * x
    }

    /// Inverse of [`RivalLoad::block_argument`] on `[0, inf)`.
    pub fn block_argument_inverse(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let m = self.count();
        for k in 0..m {
            let mult = (m - k + 1) as f64;
            let at_boundary = self.prefix[k] + mult * self.sorted[k];
            if y <= at_boundary {
                return ((y - self.prefix[k]) / mult).max(0.0);
            }
        }
        y - self.prefix[m]
    }

    /// Largest own demand with a finite payment.
    pub fn max_finite_demand(&self, curve: &CostCurve, scheme: PricingScheme) -> f64 {
        match scheme {
            PricingScheme::AverageCost => (curve.capacity() - self.total()).max(0.0),
            PricingScheme::IncreasingBlock => self.block_argument_inverse(curve.capacity()),
        }
    }
}

/// Payment, marginal payment and curvature of one consumer's slot cost with
/// the rivals held fixed.
#[derive(Debug, Clone)]
pub struct ConsumerSlot<'a> {
    pub curve: &'a CostCurve,
    pub scheme: PricingScheme,
    pub rivals: RivalLoad,
}

impl<'a> ConsumerSlot<'a> {
    pub fn new(curve: &'a CostCurve, scheme: PricingScheme, rivals: RivalLoad) -> Self {
        Self {
            curve,
            scheme,
            rivals,
        }
    }

    pub fn payment(&self, x: f64) -> f64 {
        match self.scheme {
            PricingScheme::AverageCost => average_payment(self.curve, x, self.rivals.total() + x),
            PricingScheme::IncreasingBlock => block_payment(self.curve, &self.rivals, x),
        }
    }

    pub fn marginal(&self, x: f64) -> Interval {
        match self.scheme {
            PricingScheme::AverageCost => average_marginal(self.curve, x, self.rivals.total() + x),
            PricingScheme::IncreasingBlock => block_marginal(self.curve, &self.rivals, x),
        }
    }

    /// Second derivative of the payment; the upper end is infinite where the
    /// marginal cost jumps.
    pub fn curvature(&self, x: f64) -> Interval {
        match self.scheme {
            PricingScheme::AverageCost => average_curvature(self.curve, x, self.rivals.total() + x),
            PricingScheme::IncreasingBlock => block_curvature(self.curve, &self.rivals, x),
        }
    }

    pub fn max_finite_demand(&self) -> f64 {
        self.rivals.max_finite_demand(self.curve, self.scheme)
    }
}

fn average_payment(curve: &CostCurve, x: f64, total: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let price = curve.average_unchecked(total);
    if price.is_infinite() {
        f64::INFINITY
    } else {
        x * price
    }
}

fn average_marginal(curve: &CostCurve, x: f64, total: f64) -> Interval {
    let cap = curve.capacity();
    if total > cap {
        return Interval::point(f64::INFINITY);
    }
    if total <= 0.0 {
        return Interval::point(curve.base_rate());
    }
    let avg = curve.average_unchecked(total);
    if x <= 0.0 {
        let hi = if total >= cap { f64::INFINITY } else { avg };
        return Interval { lo: avg, hi };
    }
    let (left, right) = curve.marginal_limits(total);
    let with_slope = |c_prime: f64| {
        if c_prime.is_infinite() {
            f64::INFINITY
        } else {
            ((total - x) * avg + x * c_prime) / total
        }
    };
    Interval::new(with_slope(left), with_slope(right))
}

fn average_curvature(curve: &CostCurve, x: f64, total: f64) -> Interval {
    let cap = curve.capacity();
    if total > cap {
        return Interval::point(f64::INFINITY);
    }
    let (slope_l, slope_r) = curve.marginal_slopes(total);
    if total <= 0.0 {
        return Interval::point(slope_r);
    }
    let (left, right) = curve.marginal_limits(total);
    let avg_gap = left - curve.average_unchecked(total);
    let with_curvature =
        |slope: f64| (2.0 * (total - x) * avg_gap + total * x * slope) / (total * total);
    let base = Interval::new(with_curvature(slope_l), with_curvature(slope_r));
    if right > left && x > 0.0 {
        // a jump in C' puts a Dirac mass in C''
        Interval {
            lo: base.lo,
            hi: f64::INFINITY,
        }
    } else {
        base
    }
}

fn block_payment(curve: &CostCurve, rivals: &RivalLoad, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if rivals.block_argument(x) > curve.capacity() {
        return f64::INFINITY;
    }
    let m = rivals.count();
    let mut paid = 0.0;
    let mut s_prev = 0.0;
    let mut arg_prev = 0.0;
    let mut cost_prev = 0.0;
    for k in 0..=m {
        let boundary = if k < m { rivals.sorted[k].min(x) } else { x };
        if boundary > s_prev {
            let mult = (m - k + 1) as f64;
            let arg = rivals.prefix[k] + mult * boundary;
            let arg = arg.max(arg_prev);
            let cost = curve.total_unchecked(arg);
            paid += (cost - cost_prev) / mult;
            s_prev = boundary;
            arg_prev = arg;
            cost_prev = cost;
        }
        if s_prev >= x {
            break;
        }
    }
    paid
}

fn block_marginal(curve: &CostCurve, rivals: &RivalLoad, x: f64) -> Interval {
    let arg = rivals.block_argument(x.max(0.0));
    if arg > curve.capacity() {
        return Interval::point(f64::INFINITY);
    }
    let (left, right) = curve.marginal_limits(arg);
    if x <= 0.0 {
        // only the right derivative exists at zero
        return Interval::point(right);
    }
    Interval::new(left, right)
}

fn block_curvature(curve: &CostCurve, rivals: &RivalLoad, x: f64) -> Interval {
    let x = x.max(0.0);
    let arg = rivals.block_argument(x);
    if arg > curve.capacity() {
        return Interval::point(f64::INFINITY);
    }
    let above = rivals.sorted.partition_point(|&o| o <= x);
    let mult = (rivals.count() - above + 1) as f64;
    let (slope_l, slope_r) = curve.marginal_slopes(arg);
    let (left, right) = curve.marginal_limits(arg);
    let hi = if right > left {
        f64::INFINITY
    } else {
        slope_r * mult
    };
    Interval::new(slope_l * mult, slope_r * mult).max_hi(hi)
}

/// `x_i * A(X_t)`; zero for an idle consumer, infinite past capacity.
pub fn payment_average(curve: &CostCurve, view: &SlotDemandView, i: usize) -> f64 {
    average_payment(curve, view.demands[i], view.slot_sum)
}

/// Increasing-block payment `int_0^{x_i} C'(sum_j min(x, x_j)) dx`, exact.
pub fn payment_block(curve: &CostCurve, view: &SlotDemandView, i: usize) -> f64 {
    block_payment(curve, &view.rivals_of(i), view.demands[i])
}

pub fn payment(curve: &CostCurve, view: &SlotDemandView, i: usize, scheme: PricingScheme) -> f64 {
    match scheme {
        PricingScheme::AverageCost => payment_average(curve, view, i),
        PricingScheme::IncreasingBlock => payment_block(curve, view, i),
    }
}

/// `sum_i P_it - C(X_t)`.
pub fn budget_balance(curve: &CostCurve, view: &SlotDemandView, scheme: PricingScheme) -> f64 {
    let paid: f64 = (0..view.len())
        .map(|i| payment(curve, view, i, scheme))
        .sum();
    paid - curve.total_unchecked(view.slot_sum)
}

/// Derivative of the average-cost payment in the consumer's own demand:
/// `((X - x_i) A(X) + x_i C'(X)) / X`.
pub fn marginal_payment_average(curve: &CostCurve, view: &SlotDemandView, i: usize) -> Interval {
    average_marginal(curve, view.demands[i], view.slot_sum)
}

/// Second derivative of the average-cost payment:
/// `[2 (X - x_i)(C'(X) - C(X)/X) + X x_i C''(X)] / X^2`, non-negative for
/// convex `C`.
pub fn second_derivative_payment_average(
    curve: &CostCurve,
    view: &SlotDemandView,
    i: usize,
) -> Interval {
    average_curvature(curve, view.demands[i], view.slot_sum)
}

/// Block marginal price `M(x_i, x_t) = C'(sum_j min(x_i, x_j))`.
pub fn marginal_payment_block(curve: &CostCurve, view: &SlotDemandView, i: usize) -> Interval {
    block_marginal(curve, &view.rivals_of(i), view.demands[i])
}

pub fn marginal_payment(
    curve: &CostCurve,
    view: &SlotDemandView,
    i: usize,
    scheme: PricingScheme,
) -> Interval {
    match scheme {
        PricingScheme::AverageCost => marginal_payment_average(curve, view, i),
        PricingScheme::IncreasingBlock => marginal_payment_block(curve, view, i),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic() -> CostCurve {
        // C(X) = X^2
        CostCurve::linear(0.0, 2.0, 100.0).unwrap()
    }

    #[test]
    fn average_examples() {
        let flat = CostCurve::flat(4.0, 100.0).unwrap();
        let v = SlotDemandView::new(vec![2.0, 5.0]);
        assert_eq!(payment_average(&flat, &v, 0), 8.0);
        let v = SlotDemandView::new(vec![1.0, 2.0]);
        assert_eq!(payment_average(&quadratic(), &v, 1), 6.0);
        let over = SlotDemandView::new(vec![60.0, 50.0, 0.0]);
        assert_eq!(payment_average(&quadratic(), &over, 0), f64::INFINITY);
        assert_eq!(payment_average(&quadratic(), &over, 2), 0.0);
    }

    #[test]
    fn block_examples() {
        let v = SlotDemandView::new(vec![1.0, 2.0]);
        assert_eq!(payment_block(&quadratic(), &v, 0), 2.0);
        assert_eq!(payment_block(&quadratic(), &v, 1), 7.0);
        let flat = CostCurve::flat(3.0, 100.0).unwrap();
        let v = SlotDemandView::new(vec![1.0, 4.0, 2.5]);
        assert_eq!(payment_block(&flat, &v, 1), 12.0);
        let equal = SlotDemandView::new(vec![1.5; 4]);
        let expected = quadratic().total_unchecked(6.0) / 4.0;
        assert!((payment_block(&quadratic(), &equal, 2) - expected).abs() < 1e-12);
    }

    #[test]
    fn block_blows_up_on_summed_argument() {
        let c = CostCurve::linear(0.0, 1.0, 10.0).unwrap();
        // h(6) = 6 + 5 = 11 > 10, although 6 itself is under capacity
        let v = SlotDemandView::new(vec![6.0, 5.0]);
        assert_eq!(payment_block(&c, &v, 0), f64::INFINITY);
        // the smaller consumer only climbs to h(5) = 10
        assert!(payment_block(&c, &v, 1).is_finite());
    }

    #[test]
    fn budget_balance_examples() {
        let v = SlotDemandView::new(vec![1.0, 2.0]);
        assert!(budget_balance(&quadratic(), &v, PricingScheme::IncreasingBlock).abs() < 1e-12);
        assert!(budget_balance(&quadratic(), &v, PricingScheme::AverageCost).abs() < 1e-12);
        let zeros = SlotDemandView::new(vec![0.0; 3]);
        for s in [PricingScheme::AverageCost, PricingScheme::IncreasingBlock] {
            assert_eq!(budget_balance(&quadratic(), &zeros, s), 0.0);
        }
    }

    #[test]
    fn derivative_examples() {
        let flat = CostCurve::flat(3.0, 100.0).unwrap();
        let v = SlotDemandView::new(vec![1.0, 2.0]);
        assert_eq!(marginal_payment_average(&flat, &v, 0), Interval::point(3.0));
        assert_eq!(
            second_derivative_payment_average(&flat, &v, 0),
            Interval::point(0.0)
        );
        // P_2(x) = x (1 + x), derivative 1 + 2x = 5 at x = 2
        assert_eq!(
            marginal_payment_average(&quadratic(), &v, 1),
            Interval::point(5.0)
        );
        assert_eq!(
            second_derivative_payment_average(&quadratic(), &v, 0),
            Interval::point(2.0)
        );
        let idle = SlotDemandView::new(vec![0.0, 3.0]);
        assert_eq!(
            marginal_payment_average(&quadratic(), &idle, 0),
            Interval::point(3.0)
        );

        let ident = CostCurve::linear(0.0, 1.0, 100.0).unwrap();
        let v = SlotDemandView::new(vec![1.0, 3.0]);
        assert_eq!(marginal_payment_block(&ident, &v, 1), Interval::point(4.0));
        let equal = SlotDemandView::new(vec![2.0; 3]);
        assert_eq!(
            marginal_payment_block(&ident, &equal, 0),
            Interval::point(6.0)
        );
        let shifted = CostCurve::linear(5.0, 1.0, 100.0).unwrap();
        let v = SlotDemandView::new(vec![0.0, 3.0]);
        assert_eq!(
            marginal_payment_block(&shifted, &v, 0),
            Interval::point(5.0)
        );
    }

    #[test]
    fn jumps_give_subgradient_intervals() {
        let stairs = CostCurve::new(
            vec![
                crate::cost_model::Breakpoint::new(0.0, 1.0),
                crate::cost_model::Breakpoint::new(4.0, 1.0),
                crate::cost_model::Breakpoint::new(4.0, 3.0),
            ],
            10.0,
        )
        .unwrap();
        let v = SlotDemandView::new(vec![2.0, 2.0]);
        assert_eq!(
            marginal_payment_block(&stairs, &v, 0),
            Interval::new(1.0, 3.0)
        );
        let m = marginal_payment_average(&stairs, &v, 0);
        assert_eq!(m, Interval::new(1.0, 2.0));
        assert_eq!(
            second_derivative_payment_average(&stairs, &v, 0).hi,
            f64::INFINITY
        );
    }

    #[test]
    fn block_argument_inverse_matches() {
        let r = RivalLoad::new(vec![3.0, 1.0, 1.0, 7.0]);
        for &x in &[0.0, 0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 9.0] {
            let y = r.block_argument(x);
            assert!((r.block_argument_inverse(y) - x).abs() < 1e-12);
        }
        assert_eq!(r.block_argument(2.0), 2.0 + 1.0 + 1.0 + 2.0 + 2.0);
    }

    #[test]
    fn ties_do_not_change_payments() {
        let c = quadratic();
        let a = SlotDemandView::new(vec![2.0, 2.0, 1.0]);
        let b = SlotDemandView::new(vec![1.0, 2.0, 2.0]);
        assert_eq!(payment_block(&c, &a, 0), payment_block(&c, &b, 1));
        assert_eq!(payment_block(&c, &a, 1), payment_block(&c, &b, 2));
        assert_eq!(a.sorted_order(), &[2, 0, 1]);
    }
}
