//! Damped round-robin best-response iteration.

use crate::scenario::{DemandProfile, RevenueModel, Scenario, ScenarioError};

use super::{
    assemble, best_response, condition_residuals, require_valid, EquilibriumResult, SolverConfig,
    SolverError, SolverKind, Uniqueness,
};

/// Sweeps over the consumers, replacing each row by
/// `(1 - damping) x_i + damping BR(x_i)`, until a sweep moves no entry by
/// more than `config.tol`.
///
/// `converged` additionally requires the first-order residuals to be within
/// `config.residual_tol`; the brute-force search of [`super::verify_nep`] is
/// left to the caller.
pub fn solve_iterative(
    scenario: &Scenario,
    initial: &DemandProfile,
    config: &SolverConfig,
) -> Result<EquilibriumResult, SolverError> {
    require_valid(scenario)?;
    if initial.num_consumers() != scenario.num_consumers
        || initial.num_slots() != scenario.num_slots
    {
        return Err(ScenarioError::Dimension {
            rows: scenario.num_consumers,
            cols: scenario.num_slots,
            found_rows: initial.num_consumers(),
            found_cols: initial.num_slots(),
        }
        .into());
    }
    let gamma = config.damping;
    let mut x = initial.clone();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut last_update = f64::INFINITY;
    while trace.len() < config.max_iterations {
        let mut update: f64 = 0.0;
        for i in 0..scenario.num_consumers {
            let response = best_response(scenario, &x, i)?;
            let keep_sum = scenario.daily_requirement[i] > 0.0;
            let row = damped_row(x.row(i), &response, gamma, config.tol, keep_sum);
            for (old, new) in x.row(i).iter().zip(&row) {
                update = update.max((new - old).abs());
            }
            x.set_row(i, row);
            update = update.max(shed_excess(scenario, &mut x));
        }
        trace.push(update);
        last_update = update;
        if update <= config.tol {
            break;
        }
        iterations += 1;
    }
    let residual = condition_residuals(scenario, &x)
        .iter()
        .flatten()
        .fold(0.0, |a: f64, &b| a.max(b));
    let converged = last_update <= config.tol && residual <= config.residual_tol;
    let uniqueness =
        if scenario.revenue_model == RevenueModel::ZeroRevenue && scenario.cost_curve.is_strict() {
            Uniqueness::Unique
        } else {
            Uniqueness::Unknown
        };
    assemble(
        scenario,
        x,
        iterations,
        converged,
        last_update,
        uniqueness,
        SolverKind::Iterative,
        trace,
    )
}

/// Trims the largest buyer of any slot pushed past capacity by a smaller
/// buyer's step. The largest buyer's block argument is the slot total, so
/// this is its own finite-cost domain; buyers with a requirement are left
/// alone. Returns the largest trim.
fn shed_excess(scenario: &Scenario, x: &mut DemandProfile) -> f64 {
    let cap = scenario.cost_curve.capacity();
    let mut trimmed: f64 = 0.0;
    for (t, total) in x.slot_sums().into_iter().enumerate() {
        let excess = total - cap;
        if excess <= 0.0 {
            continue;
        }
        let top = (0..scenario.num_consumers).max_by(|&a, &b| x.get(a, t).total_cmp(&x.get(b, t)));
        let Some(k) = top else { continue };
        if scenario.daily_requirement[k] > 0.0 || x.get(k, t) < excess {
            continue;
        }
        let mut row = x.row(k).to_vec();
        row[t] -= excess;
        x.set_row(k, row.clone());
        // the subtraction can round to one ulp above capacity
        while x.slot_sums()[t] > cap && row[t] > 0.0 {
            row[t] = row[t].next_down();
            x.set_row(k, row.clone());
        }
        trimmed = trimmed.max(excess);
    }
    trimmed
}

/// `(1 - gamma) old + gamma br`, with two corrections for the geometric
/// approach of damping. Entries whose best response is zero are snapped to
/// zero once below `tol`, otherwise positive crumbs violate the idle-slot
/// condition; with `keep_sum` the snapped mass moves to the row's largest
/// entry. Without `keep_sum`, entries within `tol` of their best response
/// take it exactly, so a response at a capacity bound reaches the bound.
fn damped_row(old: &[f64], response: &[f64], gamma: f64, tol: f64, keep_sum: bool) -> Vec<f64> {
    let mut row: Vec<f64> = old
        .iter()
        .zip(response)
        .map(|(&o, &br)| ((1.0 - gamma) * o + gamma * br).max(0.0))
        .collect();
    let mut snapped = 0.0;
    for (v, &br) in row.iter_mut().zip(response) {
        if br == 0.0 && *v > 0.0 && *v < tol {
            snapped += *v;
            *v = 0.0;
        } else if !keep_sum && (*v - br).abs() < tol {
            *v = br;
        }
    }
    if keep_sum && snapped > 0.0 {
        let top = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b]));
        if let Some(k) = top.filter(|&k| row[k] > 0.0) {
            row[k] += snapped;
        }
    }
    row
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
    fn zero_revenue_reaches_uniform_split() {
        for scheme in [PricingScheme::AverageCost, PricingScheme::IncreasingBlock] {
            let s = Scenario::zero_revenue(vec![3.0, 6.0], 3, scheme, quadratic());
            let start = DemandProfile::new(vec![vec![3.0, 0.0, 0.0], vec![0.0, 1.0, 5.0]]).unwrap();
            let r = solve_iterative(&s, &start, &SolverConfig::default()).unwrap();
            assert!(r.converged);
            for t in 0..3 {
                assert!((r.profile.get(0, t) - 1.0).abs() < 1e-7);
                assert!((r.profile.get(1, t) - 2.0).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn fixed_point_start_does_not_move() {
        let s = Scenario::zero_revenue(vec![2.0, 4.0], 2, PricingScheme::AverageCost, quadratic());
        let start = DemandProfile::uniform(&s.daily_requirement, 2);
        let r = solve_iterative(&s, &start, &SolverConfig::default()).unwrap();
        assert_eq!(r.iterations, 0);
        assert!(r.converged);
    }

    #[test]
    fn average_constant_rate_interior_equilibrium() {
        // first-order conditions 5 = 2 x1 + x2 and 3 = x1 + 2 x2
        let s = Scenario::constant_rate(
            vec![vec![5.0], vec![3.0]],
            PricingScheme::AverageCost,
            quadratic(),
        );
        let r = solve_iterative(&s, &DemandProfile::zeros(2, 1), &SolverConfig::default()).unwrap();
        assert!(r.converged);
        assert!((r.profile.get(0, 0) - 7.0 / 3.0).abs() < 1e-7);
        assert!((r.profile.get(1, 0) - 1.0 / 3.0).abs() < 1e-7);
    }

    #[test]
    fn iteration_cap_reports_not_converged() {
        let s = Scenario::zero_revenue(vec![3.0, 6.0], 3, PricingScheme::AverageCost, quadratic());
        let start = DemandProfile::new(vec![vec![3.0, 0.0, 0.0], vec![0.0, 1.0, 5.0]]).unwrap();
        let config = SolverConfig {
            max_iterations: 2,
            ..SolverConfig::default()
        };
        let r = solve_iterative(&s, &start, &config).unwrap();
        assert!(!r.converged);
        assert_eq!(r.trace.len(), 2);
    }

    #[test]
    fn idle_slots_end_exactly_zero() {
        let curve = CostCurve::linear(5.0, 0.4, 50.0).unwrap();
        let rates = vec![
            vec![12.0, 20.0, 9.0],
            vec![15.0, 11.0, 25.0],
            vec![8.0, 18.0, 14.0],
        ];
        let s = Scenario::constant_rate(rates, PricingScheme::AverageCost, curve);
        let start = DemandProfile::new(vec![vec![1.0; 3]; 3]).unwrap();
        let r = solve_iterative(&s, &start, &SolverConfig::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.profile.get(0, 2), 0.0);
        assert_eq!(r.profile.get(2, 2), 0.0);
    }

    #[test]
    fn block_slot_at_capacity_stays_finite() {
        let curve = CostCurve::linear(5.0, 0.4, 50.0).unwrap();
        let rates = vec![
            vec![12.0, 20.0, 9.0],
            vec![15.0, 11.0, 25.0],
            vec![8.0, 18.0, 14.0],
        ];
        let s = Scenario::constant_rate(rates, PricingScheme::IncreasingBlock, curve);
        let r = solve_iterative(&s, &DemandProfile::zeros(3, 3), &SolverConfig::default()).unwrap();
        assert!(r.converged);
        assert!(r.profile.slot_sums()[2] <= 50.0);
        assert!((r.profile.get(2, 2) - 115.0 / 12.0).abs() < 1e-7);
    }

    #[test]
    fn average_slot_reaches_capacity_exactly() {
        let curve = CostCurve::linear(5.0, 0.4, 50.0).unwrap();
        let s = Scenario::constant_rate(
            vec![vec![60.0], vec![45.0]],
            PricingScheme::AverageCost,
            curve,
        );
        let r = solve_iterative(&s, &DemandProfile::zeros(2, 1), &SolverConfig::default()).unwrap();
        assert!(r.converged);
        assert!(r.profile.slot_sums()[0] <= 50.0);
        assert!(r.breakdown.payoff.iter().all(|p| p.is_finite()));
    }
}
