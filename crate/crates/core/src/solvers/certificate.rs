//! Equilibrium certificates: first-order residuals plus a brute-force search
//! over unilateral deviations.

use rayon::prelude::*;
use serde::Serialize;

use crate::scenario::{DemandProfile, Scenario};

use super::best_response::SlotProblem;

/// Tolerances of [`verify_nep_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerifyConfig {
    /// Deviation grid spacing, as a fraction of the consumer's requirement
    /// (or of each slot's finite-cost range when the requirement is zero).
    pub grid_step: f64,
    /// Largest accepted relative first-order residual.
    pub residual_tol: f64,
    /// Largest accepted deviation gain, relative to the payoff scale.
    pub gain_tol: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            grid_step: 1e-3,
            residual_tol: 1e-6,
            gain_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NepCertificate {
    /// `[consumer][slot]` relative first-order residuals.
    pub condition_residuals: Vec<Vec<f64>>,
    pub max_residual: f64,
    /// Best unilateral payoff improvement found by the search [$].
    pub deviation_gain: f64,
    pub consumer_gains: Vec<f64>,
    /// `max(1, max_i sum_t |R_it| + |P_it|)` [$]; gains are compared to
    /// `gain_tol * payoff_scale`.
    pub payoff_scale: f64,
    pub grid_step: f64,
    pub residual_tol: f64,
    pub gain_tol: f64,
    pub verified: bool,
}

/// Relative first-order residuals of every consumer's problem.
///
/// With `I_t` the marginal-payment interval minus the revenue rate, a
/// consumer is at a stationary point when some multiplier `lambda >= 0`
/// (zero if its requirement is slack or zero) lies in `I_t` for every buying
/// slot and below `I_t` for every idle slot. The multiplier is chosen to fit
/// the buying slots; each slot then reports its distance, scaled by
/// `max(1, |lambda + r_t|)`. A shortfall against the requirement is reported
/// in every slot of that consumer.
pub fn condition_residuals(scenario: &Scenario, profile: &DemandProfile) -> Vec<Vec<f64>> {
    (0..scenario.num_consumers)
        .map(|i| consumer_residuals(scenario, profile, i))
        .collect()
}

fn consumer_residuals(scenario: &Scenario, profile: &DemandProfile, i: usize) -> Vec<f64> {
    let t_count = scenario.num_slots;
    let requirement = scenario.daily_requirement[i];
    let x = profile.row(i);
    let intervals: Vec<_> = (0..t_count)
        .map(|t| {
            scenario
                .consumer_slot(profile, i, t)
                .marginal(x[t])
                .shift(-scenario.rate(i, t))
        })
        .collect();
    let total: f64 = x.iter().sum();
    let slack = total > requirement + 1e-9 * requirement.max(1.0);
    let lambda = if requirement <= 0.0 || slack {
        0.0
    } else {
        let mut low: f64 = 0.0;
        let mut high = f64::INFINITY;
        for (t, iv) in intervals.iter().enumerate() {
            if x[t] > 0.0 {
                low = low.max(iv.lo);
            }
            high = high.min(iv.hi);
        }
        if low <= high || high.is_infinite() {
            low
        } else {
            0.5 * (low + high)
        }
    };
    let shortfall = ((requirement - total) / requirement.max(1.0)).max(0.0);
    intervals
        .iter()
        .enumerate()
        .map(|(t, iv)| {
            let miss = if x[t] > 0.0 {
                iv.distance(lambda)
            } else {
                (lambda - iv.hi).max(0.0)
            };
            let scale = (lambda + scenario.rate(i, t)).abs().max(1.0);
            (miss / scale).max(shortfall)
        })
        .collect()
}

/// Certificate with the default tolerances and the given grid step.
pub fn verify_nep(scenario: &Scenario, profile: &DemandProfile, grid_step: f64) -> NepCertificate {
    verify_nep_with(
        scenario,
        profile,
        &VerifyConfig {
            grid_step,
            ..VerifyConfig::default()
        },
    )
}

/// Evaluates the first-order residuals and searches each consumer's
/// deviations on a grid.
///
/// Without a requirement each slot is searched independently over
/// `k * grid_step * xmax_t`. With a requirement `rho > 0` the search covers
/// every split of `rho` into multiples of `grid_step * rho` (exact dynamic
/// programming over slots), plus small transfers between pairs of slots
/// around the current schedule. Extra energy beyond `rho` never lowers a
/// payment, so only schedules meeting the requirement exactly are searched.
pub fn verify_nep_with(
    scenario: &Scenario,
    profile: &DemandProfile,
    config: &VerifyConfig,
) -> NepCertificate {
    let condition_residuals = condition_residuals(scenario, profile);
    let max_residual = condition_residuals
        .iter()
        .flatten()
        .fold(0.0, |a: f64, &b| {
            a.max(if b.is_nan() { f64::INFINITY } else { b })
        });
    let consumer_gains: Vec<f64> = (0..scenario.num_consumers)
        .into_par_iter()
        .map(|i| deviation_gain(scenario, profile, i, config.grid_step))
        .collect();
    let deviation_gain = consumer_gains.iter().fold(0.0, |a: f64, &b| a.max(b));
    let payoff_scale = match scenario.payoff(profile) {
        Ok(b) => b
            .revenue
            .iter()
            .zip(&b.payment)
            .map(|(r, p)| r.iter().chain(p).map(|v| v.abs()).sum::<f64>())
            .fold(1.0, f64::max),
        Err(_) => f64::INFINITY,
    };
    let verified = max_residual <= config.residual_tol
        && deviation_gain <= config.gain_tol * payoff_scale
        && profile.is_feasible(scenario, 1e-9);
    NepCertificate {
        condition_residuals,
        max_residual,
        deviation_gain,
        consumer_gains,
        payoff_scale,
        grid_step: config.grid_step,
        residual_tol: config.residual_tol,
        gain_tol: config.gain_tol,
        verified,
    }
}

const LOCAL_PROBES: usize = 10;

fn deviation_gain(scenario: &Scenario, profile: &DemandProfile, i: usize, grid_step: f64) -> f64 {
    let slots: Vec<SlotProblem> = (0..scenario.num_slots)
        .map(|t| SlotProblem::new(scenario, profile, i, t))
        .collect();
    let x = profile.row(i);
    let current: f64 = slots.iter().zip(x).map(|(s, &v)| s.value(v)).sum();
    if !current.is_finite() {
        return f64::INFINITY;
    }
    let steps = (1.0 / grid_step).round().max(1.0) as usize;
    let requirement = scenario.daily_requirement[i];
    let best = if requirement <= 0.0 {
        free_search(&slots, x, steps)
    } else {
        budget_search(&slots, requirement, steps).max(transfer_search(
            &slots,
            x,
            requirement / steps as f64,
        ))
    };
    (best - current).max(0.0)
}

fn free_search(slots: &[SlotProblem], x: &[f64], steps: usize) -> f64 {
    slots
        .iter()
        .zip(x)
        .map(|(s, &xt)| {
            let unit = s.xmax / steps as f64;
            let mut best = s.value(xt);
            for k in 0..=steps {
                best = best.max(s.value(k as f64 * unit));
            }
            for k in 1..=LOCAL_PROBES {
                let d = k as f64 * unit / LOCAL_PROBES as f64;
                for y in [xt - d, xt + d] {
                    if (0.0..=s.xmax).contains(&y) {
                        best = best.max(s.value(y));
                    }
                }
            }
            best
        })
        .sum()
}

/// Best split of `requirement` into `steps` equal units across the slots.
fn budget_search(slots: &[SlotProblem], requirement: f64, steps: usize) -> f64 {
    let unit = requirement / steps as f64;
    let tables: Vec<Vec<f64>> = slots
        .iter()
        .map(|s| (0..=steps).map(|k| s.value(k as f64 * unit)).collect())
        .collect();
    let mut best = tables[0].clone();
    for table in &tables[1..] {
        let mut next = vec![f64::NEG_INFINITY; steps + 1];
        for (total, slot_best) in next.iter_mut().enumerate() {
            for k in 0..=total {
                let v = best[total - k] + table[k];
                if v > *slot_best {
                    *slot_best = v;
                }
            }
        }
        best = next;
    }
    best[steps]
}

/// Moves small amounts between every ordered pair of slots.
fn transfer_search(slots: &[SlotProblem], x: &[f64], unit: f64) -> f64 {
    let values: Vec<f64> = slots.iter().zip(x).map(|(s, &v)| s.value(v)).collect();
    let base: f64 = values.iter().sum();
    let mut best = base;
    for a in 0..slots.len() {
        for b in 0..slots.len() {
            if a == b {
                continue;
            }
            for k in 1..=LOCAL_PROBES {
                let d = (k as f64 * unit / LOCAL_PROBES as f64).min(x[a]);
                if d <= 0.0 || x[b] + d > slots[b].xmax {
                    continue;
                }
                let v = base - values[a] - values[b]
                    + slots[a].value(x[a] - d)
                    + slots[b].value(x[b] + d);
                best = best.max(v);
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost_model::CostCurve;
    use crate::pricing::PricingScheme;

    fn quadratic() -> CostCurve {
        CostCurve::linear(0.0, 2.0, 100.0).unwrap()
    }

    #[test]
    fn uniform_split_is_verified() {
        for scheme in [PricingScheme::AverageCost, PricingScheme::IncreasingBlock] {
            let s = Scenario::zero_revenue(vec![2.0, 4.0], 3, scheme, quadratic());
            let p = DemandProfile::uniform(&s.daily_requirement, 3);
            let cert = verify_nep(&s, &p, 1e-3);
            assert!(cert.verified, "{cert:?}");
            assert!(cert.max_residual < 1e-12);
        }
    }

    #[test]
    fn shifted_profile_is_rejected() {
        let s = Scenario::zero_revenue(vec![2.0, 4.0], 2, PricingScheme::AverageCost, quadratic());
        let p = DemandProfile::new(vec![vec![1.1, 0.9], vec![2.0, 2.0]]).unwrap();
        let cert = verify_nep(&s, &p, 1e-3);
        assert!(!cert.verified);
        assert!(cert.consumer_gains[0] > 0.0);
        assert!(cert.max_residual > 1e-3);
    }

    #[test]
    fn lone_buyer_at_average_rate_can_gain() {
        // selling at A(X) = r leaves zero profit; buying less earns more
        let s = Scenario::constant_rate(vec![vec![4.0]], PricingScheme::AverageCost, quadratic());
        let p = DemandProfile::new(vec![vec![4.0]]).unwrap();
        let cert = verify_nep(&s, &p, 1e-3);
        assert!(cert.deviation_gain > 3.9, "{cert:?}");
        let optimum = DemandProfile::new(vec![vec![2.0]]).unwrap();
        assert!(verify_nep(&s, &optimum, 1e-3).verified);
    }

    #[test]
    fn idle_slot_condition() {
        let s = Scenario::constant_rate(
            vec![vec![1.0], vec![3.0]],
            PricingScheme::IncreasingBlock,
            CostCurve::linear(2.0, 1.0, 100.0).unwrap(),
        );
        // consumer 0 cannot afford C'(0) = 2; consumer 1 buys until 2 + x = 3
        let p = DemandProfile::new(vec![vec![0.0], vec![1.0]]).unwrap();
        let res = condition_residuals(&s, &p);
        assert_eq!(res, vec![vec![0.0], vec![0.0]]);
        let bad = DemandProfile::new(vec![vec![0.5], vec![1.0]]).unwrap();
        assert!(condition_residuals(&s, &bad)[0][0] > 0.0);
    }
}
