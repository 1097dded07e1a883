//! A single consumer's payoff-maximizing schedule against fixed rivals.
//!
//! The consumer minimizes `sum_t P_t(x_t) - r_t x_t` subject to
//! `sum_t x_t >= rho` and `0 <= x_t <= xmax_t`, where `xmax_t` is the largest
//! demand with a finite payment. Each slot term is convex, so for a
//! multiplier `lambda >= 0` the slot optimum is the largest `x_t` whose
//! marginal payment is at most `r_t + lambda`. An outer root search finds the
//! smallest `lambda` at which those responses cover `rho`.

use crate::pricing::{ConsumerSlot, PricingScheme};
use crate::scenario::{DemandProfile, Scenario};

use super::SolverError;

pub(crate) struct SlotProblem<'a> {
    pub slot: ConsumerSlot<'a>,
    pub rate: f64,
    pub xmax: f64,
}

impl<'a> SlotProblem<'a> {
    pub fn new(scenario: &'a Scenario, profile: &DemandProfile, i: usize, t: usize) -> Self {
        let slot = scenario.consumer_slot(profile, i, t);
        let xmax = slot.max_finite_demand();
        Self {
            slot,
            rate: scenario.rate(i, t),
            xmax,
        }
    }

    /// Slot payoff `r x - P(x)`; `-inf` where the payment is infinite.
    pub fn value(&self, x: f64) -> f64 {
        let paid = self.slot.payment(x);
        if paid.is_infinite() {
            f64::NEG_INFINITY
        } else {
            self.rate * x - paid
        }
    }

    /// Largest optimal demand when each unit is worth `rate + lambda`.
    pub fn response(&self, lambda: f64) -> f64 {
        let target = self.rate + lambda;
        if self.xmax <= 0.0 {
            return 0.0;
        }
        match self.slot.scheme {
            PricingScheme::IncreasingBlock => {
                let arg = self.slot.curve.inverse_marginal(target);
                self.slot.rivals.block_argument_inverse(arg).min(self.xmax)
            }
            PricingScheme::AverageCost => self.average_response(target),
        }
    }

    /// Multiplier at which the response reaches `xmax`.
    fn saturation(&self) -> f64 {
        self.slot.marginal(self.xmax).lo - self.rate
    }

    /// `sup {x in [0, xmax] : D(x) <= target}` for the non-decreasing
    /// marginal payment `D`, by Newton's method safeguarded with bisection.
    fn average_response(&self, target: f64) -> f64 {
        let d = |x: f64| self.slot.marginal(x).lo - target;
        if d(0.0) > 0.0 {
            return 0.0;
        }
        if d(self.xmax) <= 0.0 {
            return self.xmax;
        }
        let (mut lo, mut hi) = (0.0, self.xmax);
        let mut x = 0.5 * (lo + hi);
        let mut step_old = hi - lo;
        let mut step = step_old;
        for _ in 0..200 {
            let f = d(x);
            if f <= 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            if hi - lo <= 1e-15 * hi.max(1.0) || f == 0.0 {
                break;
            }
            let slope = self.slot.curvature(x).lo;
            let newton = x - f / slope;
            let use_newton = slope > 0.0
                && newton > lo
                && newton < hi
                && (2.0 * f).abs() <= (step_old * slope).abs();
            step_old = step;
            if use_newton {
                step = (newton - x).abs();
                x = newton;
            } else {
                step = 0.5 * (hi - lo);
                x = lo + step;
            }
        }
        if d(x) <= 0.0 {
            x
        } else {
            lo
        }
    }
}

/// Best response of consumer `i` to the other rows of `profile`.
///
/// Returns [`SolverError::Infeasible`] when the rivals leave too little
/// finite-cost supply to meet the consumer's requirement.
pub fn best_response(
    scenario: &Scenario,
    profile: &DemandProfile,
    i: usize,
) -> Result<Vec<f64>, SolverError> {
    let slots: Vec<SlotProblem> = (0..scenario.num_slots)
        .map(|t| SlotProblem::new(scenario, profile, i, t))
        .collect();
    let requirement = scenario.daily_requirement[i];
    let responses =
        |lambda: f64| -> Vec<f64> { slots.iter().map(|s| s.response(lambda)).collect() };

    let free = responses(0.0);
    let free_total: f64 = free.iter().sum();
    if requirement <= 0.0 || free_total >= requirement {
        return Ok(free);
    }
    let available: f64 = slots.iter().map(|s| s.xmax).sum();
    if available < requirement * (1.0 - 1e-12) {
        return Err(SolverError::Infeasible {
            consumer: i,
            requirement,
            available,
        });
    }

    // Illinois-style regula falsi on phi(lambda) = sum_t x_t(lambda) - rho,
    // with a forced bisection every few steps since phi may jump.
    let (mut low, mut low_x, mut f_low) = (0.0, free, free_total - requirement);
    let high_start = slots
        .iter()
        .map(SlotProblem::saturation)
        .fold(0.0, f64::max);
    let mut high = high_start;
    let mut high_x = responses(high);
    let mut f_high = high_x.iter().sum::<f64>() - requirement;
    // weights for the secant step, halved on a stale side
    let (mut g_low, mut g_high) = (f_low, f_high);
    let mut last_side = 0i8;
    let abs_tol = 1e-13 * requirement.max(1.0);
    for step in 0..300 {
        if f_high <= abs_tol || high - low <= 1e-15 * high.abs().max(1.0) {
            break;
        }
        let mut mid = if step % 4 == 3 {
            0.5 * (low + high)
        } else {
            high - g_high * (high - low) / (g_high - g_low)
        };
        if !(mid > low && mid < high) {
            mid = 0.5 * (low + high);
        }
        let x = responses(mid);
        let f = x.iter().sum::<f64>() - requirement;
        if f >= 0.0 {
            high = mid;
            high_x = x;
            f_high = f;
            g_high = f;
            if last_side == 1 {
                g_low *= 0.5;
            }
            last_side = 1;
        } else {
            low = mid;
            low_x = x;
            f_low = f;
            g_low = f;
            if last_side == -1 {
                g_high *= 0.5;
            }
            last_side = -1;
        }
    }

    // blend the two bracketing responses so the requirement binds exactly
    let low_total = f_low + requirement;
    let high_total = f_high + requirement;
    let theta = if high_total > low_total {
        ((requirement - low_total) / (high_total - low_total)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(low_x
        .iter()
        .zip(&high_x)
        .map(|(&a, &b)| a + theta * (b - a))
        .collect())
}
