//! Closed-form equilibria.

use crate::cost_model::CostCurve;
use crate::pricing::{PricingScheme, RivalLoad};
use crate::scenario::{DemandProfile, RevenueModel, Scenario};

use super::{
    assemble, case_name, require_valid, EquilibriumResult, SolverConfig, SolverError, SolverKind,
    Uniqueness,
};

/// Zero-revenue equilibrium under a strictly convex cost: every consumer
/// spreads its requirement evenly, `x[i][t] = rho_i / T`, for both pricing
/// schemes.
pub fn solve_zero_revenue_closed_form(
    scenario: &Scenario,
) -> Result<EquilibriumResult, SolverError> {
    require_valid(scenario)?;
    if scenario.revenue_model != RevenueModel::ZeroRevenue {
        return Err(SolverError::WrongCase {
            solver: "zero-revenue closed form",
            expected: "the zero-revenue model",
            found: case_name(scenario),
        });
    }
    if !scenario.cost_curve.is_strict() {
        return Err(SolverError::NotStrict);
    }
    let profile = DemandProfile::uniform(&scenario.daily_requirement, scenario.num_slots);
    assemble(
        scenario,
        profile,
        0,
        true,
        0.0,
        Uniqueness::Unique,
        SolverKind::ZeroRevenueClosedForm,
        Vec::new(),
    )
}

/// Average-cost pricing with constant revenue rates, slot by slot: only the
/// consumer with the highest rate buys, up to the quantity where the average
/// cost reaches its rate; nobody buys when that rate is below `C'(0)`.
///
/// Tied top rates split the quantity equally and mark the result
/// [`Uniqueness::NonUnique`].
pub fn solve_avg_constant_revenue(scenario: &Scenario) -> Result<EquilibriumResult, SolverError> {
    require_valid(scenario)?;
    if scenario.pricing_scheme != PricingScheme::AverageCost
        || scenario.revenue_model != RevenueModel::ConstantRate
    {
        return Err(SolverError::WrongCase {
            solver: "average-cost constant-rate solver",
            expected: "average_cost/constant_rate",
            found: case_name(scenario),
        });
    }
    let curve = &scenario.cost_curve;
    let (n, t_count) = (scenario.num_consumers, scenario.num_slots);
    let mut demand = vec![vec![0.0; t_count]; n];
    let mut uniqueness = Uniqueness::Unique;
    for t in 0..t_count {
        let top = (0..n)
            .map(|i| scenario.revenue_rates[i][t])
            .fold(f64::NEG_INFINITY, f64::max);
        if top < curve.base_rate() {
            continue;
        }
        let winners = (0..n)
            .filter(|&i| scenario.revenue_rates[i][t] == top)
            .count();
        if winners > 1 {
            uniqueness = Uniqueness::NonUnique;
        }
        let share = curve.inverse_average(top) / winners as f64;
        for (row, rates) in demand.iter_mut().zip(&scenario.revenue_rates) {
            if rates[t] == top {
                row[t] = share;
            }
        }
    }
    assemble(
        scenario,
        DemandProfile::new(demand)?,
        0,
        true,
        0.0,
        uniqueness,
        SolverKind::AverageConstantRate,
        Vec::new(),
    )
}

/// Outcome of the per-slot damped fixed-point iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotIteration {
    pub demand: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

/// Increasing-block, constant-rate equilibrium of one slot by iterating each
/// consumer's best response `M(x_i, x_t) = r_i` against the current demands
/// of the others, damped by `damping`.
pub fn block_slot_fixed_point(
    curve: &CostCurve,
    rates: &[f64],
    initial: &[f64],
    damping: f64,
    tol: f64,
    max_iterations: usize,
) -> SlotIteration {
    let n = rates.len();
    let targets: Vec<f64> = rates.iter().map(|&r| curve.inverse_marginal(r)).collect();
    let mut x = initial.to_vec();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while trace.len() < max_iterations {
        let mut update: f64 = 0.0;
        for i in 0..n {
            let rivals = RivalLoad::new((0..n).filter(|&j| j != i).map(|j| x[j]).collect());
            let response = if rates[i] < curve.base_rate() {
                0.0
            } else {
                rivals.block_argument_inverse(targets[i])
            };
            let next = (1.0 - damping) * x[i] + damping * response;
            update = update.max((next - x[i]).abs());
            x[i] = next;
        }
        trace.push(update);
        if update <= tol {
            converged = true;
            break;
        }
        iterations += 1;
    }
    SlotIteration {
        demand: x,
        iterations,
        converged,
        trace,
    }
}

/// Direct solve of one slot. With consumers sorted by rate, the demands
/// are sorted the same way and `C'(sum_j min(x_k, x_j)) = r_k` becomes the
/// triangular system `y_k = S_{k-1} + (N - k + 1) x_k` with
/// `y_k = inverse_marginal(r_k)`.
fn block_slot_direct(curve: &CostCurve, rates: &[f64]) -> Vec<f64> {
    let n = rates.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| rates[a].total_cmp(&rates[b]).then(a.cmp(&b)));
    let mut x = vec![0.0; n];
    let mut assigned = 0.0;
    let mut prev = 0.0;
    for (k, &i) in order.iter().enumerate() {
        let target = if rates[i] < curve.base_rate() {
            0.0
        } else {
            curve.inverse_marginal(rates[i])
        };
        let remaining = (n - k) as f64;
        let xi = ((target - assigned) / remaining).max(prev);
        x[i] = xi;
        assigned += xi;
        prev = xi;
    }
    x
}

/// Largest relative violation of the slot's equilibrium conditions:
/// `r_i` inside the marginal-price interval when buying, `r_i <= M(0, x_t)`
/// when idle.
fn block_slot_residual(curve: &CostCurve, rates: &[f64], x: &[f64]) -> f64 {
    let n = rates.len();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let rivals = RivalLoad::new((0..n).filter(|&j| j != i).map(|j| x[j]).collect());
        let arg = rivals.block_argument(x[i]);
        let (left, right) = curve.marginal_limits(arg);
        let right = if arg >= curve.capacity() {
            f64::INFINITY
        } else {
            right
        };
        let r = rates[i];
        let miss = if x[i] > 0.0 {
            if r < left {
                left - r
            } else if r > right {
                r - right
            } else {
                0.0
            }
        } else {
            (r - right).max(0.0)
        };
        worst = worst.max(miss / r.max(1.0));
    }
    worst
}

/// Increasing-block pricing with constant revenue rates. Slots decouple;
/// each is solved directly, falling back to the damped fixed-point iteration
/// when the direct solution misses the equilibrium conditions.
pub fn solve_block_constant_revenue(
    scenario: &Scenario,
    config: &SolverConfig,
) -> Result<EquilibriumResult, SolverError> {
    require_valid(scenario)?;
    if scenario.pricing_scheme != PricingScheme::IncreasingBlock
        || scenario.revenue_model != RevenueModel::ConstantRate
    {
        return Err(SolverError::WrongCase {
            solver: "increasing-block constant-rate solver",
            expected: "increasing_block/constant_rate",
            found: case_name(scenario),
        });
    }
    let curve = &scenario.cost_curve;
    let (n, t_count) = (scenario.num_consumers, scenario.num_slots);
    let mut demand = vec![vec![0.0; t_count]; n];
    let mut iterations = 0;
    let mut converged = true;
    let mut max_update: f64 = 0.0;
    let mut trace = Vec::new();
    for t in 0..t_count {
        let rates: Vec<f64> = (0..n).map(|i| scenario.revenue_rates[i][t]).collect();
        let mut x = block_slot_direct(curve, &rates);
        if block_slot_residual(curve, &rates, &x) > config.residual_tol {
            let run = block_slot_fixed_point(
                curve,
                &rates,
                &x,
                config.damping,
                config.tol,
                config.max_iterations,
            );
            iterations = iterations.max(run.iterations);
            converged &= run.converged;
            max_update = max_update.max(run.trace.last().copied().unwrap_or(0.0));
            trace.extend(run.trace);
            x = run.demand;
        }
        for (row, xi) in demand.iter_mut().zip(x) {
            row[t] = xi;
        }
    }
    assemble(
        scenario,
        DemandProfile::new(demand)?,
        iterations,
        converged,
        max_update,
        Uniqueness::Unknown,
        SolverKind::BlockConstantRate,
        trace,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost_model::Breakpoint;

    fn identity(cap: f64) -> CostCurve {
        CostCurve::linear(0.0, 1.0, cap).unwrap()
    }

    #[test]
    fn zero_revenue_spreads_evenly() {
        let s = Scenario::zero_revenue(
            vec![4.0, 8.0, 12.0],
            4,
            PricingScheme::IncreasingBlock,
            identity(100.0),
        );
        let r = solve_zero_revenue_closed_form(&s).unwrap();
        assert_eq!(
            r.profile.rows(),
            &[vec![1.0; 4], vec![2.0; 4], vec![3.0; 4]]
        );
        for i in 0..3 {
            assert_eq!(r.profile.consumer_total(i), s.daily_requirement[i]);
        }
    }

    #[test]
    fn zero_revenue_single_consumer_price() {
        let s = Scenario::zero_revenue(
            vec![6.0],
            2,
            PricingScheme::AverageCost,
            CostCurve::linear(0.0, 2.0, 100.0).unwrap(),
        );
        let r = solve_zero_revenue_closed_form(&s).unwrap();
        assert_eq!(r.profile.row(0), &[3.0, 3.0]);
        assert_eq!(
            r.prices,
            super::super::PriceSchedule::PerSlot(vec![3.0, 3.0])
        );
    }

    #[test]
    fn zero_revenue_refuses_flat_curve_and_wrong_model() {
        let s = Scenario::zero_revenue(
            vec![1.0],
            2,
            PricingScheme::AverageCost,
            CostCurve::flat(1.0, 10.0).unwrap(),
        );
        assert!(matches!(
            solve_zero_revenue_closed_form(&s),
            Err(SolverError::NotStrict)
        ));
        let cr =
            Scenario::constant_rate(vec![vec![1.0]], PricingScheme::AverageCost, identity(5.0));
        assert!(matches!(
            solve_zero_revenue_closed_form(&cr),
            Err(SolverError::WrongCase { .. })
        ));
    }

    #[test]
    fn average_constant_rate_top_rate_buys() {
        // A(X) = X, so the winner buys until A(X) = 5
        let s = Scenario::constant_rate(
            vec![vec![5.0], vec![3.0]],
            PricingScheme::AverageCost,
            CostCurve::linear(0.0, 2.0, 100.0).unwrap(),
        );
        let r = solve_avg_constant_revenue(&s).unwrap();
        assert!((r.profile.get(0, 0) - 5.0).abs() < 1e-12);
        assert_eq!(r.profile.get(1, 0), 0.0);
        assert_eq!(r.uniqueness, Uniqueness::Unique);
    }

    #[test]
    fn average_constant_rate_below_threshold_and_ties() {
        let curve = CostCurve::linear(10.0, 1.0, 100.0).unwrap();
        let s = Scenario::constant_rate(
            vec![vec![5.0, 20.0], vec![9.0, 20.0]],
            PricingScheme::AverageCost,
            curve.clone(),
        );
        let r = solve_avg_constant_revenue(&s).unwrap();
        assert_eq!(r.profile.get(0, 0), 0.0);
        assert_eq!(r.profile.get(1, 0), 0.0);
        assert_eq!(r.uniqueness, Uniqueness::NonUnique);
        let q = curve.inverse_average(20.0);
        assert_eq!(r.profile.get(0, 1), q / 2.0);
        assert_eq!(r.profile.get(1, 1), q / 2.0);
    }

    #[test]
    fn block_constant_rate_examples() {
        let s = Scenario::constant_rate(
            vec![vec![2.0], vec![4.0]],
            PricingScheme::IncreasingBlock,
            identity(100.0),
        );
        let r = solve_block_constant_revenue(&s, &SolverConfig::default()).unwrap();
        assert_eq!(r.profile.rows(), &[vec![1.0], vec![3.0]]);

        let s = Scenario::constant_rate(
            vec![vec![6.0]; 4],
            PricingScheme::IncreasingBlock,
            identity(100.0),
        );
        let r = solve_block_constant_revenue(&s, &SolverConfig::default()).unwrap();
        for i in 0..4 {
            assert!((r.profile.get(i, 0) - 1.5).abs() < 1e-12);
        }

        let s = Scenario::constant_rate(
            vec![vec![1.0], vec![2.0]],
            PricingScheme::IncreasingBlock,
            CostCurve::linear(3.0, 1.0, 100.0).unwrap(),
        );
        let r = solve_block_constant_revenue(&s, &SolverConfig::default()).unwrap();
        assert_eq!(r.profile.rows(), &[vec![0.0], vec![0.0]]);
    }

    #[test]
    fn fixed_point_agrees_with_direct_solve() {
        let curve = CostCurve::new(
            vec![
                Breakpoint::new(0.0, 1.0),
                Breakpoint::new(10.0, 4.0),
                Breakpoint::new(10.0, 6.0),
                Breakpoint::new(30.0, 9.0),
            ],
            30.0,
        )
        .unwrap();
        let rates = [0.5, 2.0, 3.5, 5.0, 7.0, 8.0];
        let direct = block_slot_direct(&curve, &rates);
        let run = block_slot_fixed_point(&curve, &rates, &[0.0; 6], 0.5, 1e-12, 100_000);
        assert!(run.converged);
        for (a, b) in direct.iter().zip(&run.demand) {
            assert!((a - b).abs() < 1e-9, "{direct:?} vs {:?}", run.demand);
        }
        assert!(block_slot_residual(&curve, &rates, &direct) < 1e-12);
    }
}
