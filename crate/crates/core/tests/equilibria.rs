mod common;

use common::strict_curve;
use loadgame::solvers::{self, SolverChoice, SolverConfig};
use loadgame::{CostCurve, DemandProfile, PricingScheme, Scenario};
use proptest::prelude::*;

const SCHEMES: [PricingScheme; 2] = [PricingScheme::AverageCost, PricingScheme::IncreasingBlock];

fn tight() -> SolverConfig {
    SolverConfig {
        tol: 1e-12,
        residual_tol: 1e-9,
        ..SolverConfig::default()
    }
}

/// Zero-revenue game on a strict curve with total requirement at 80% of one
/// slot's capacity, so even a lopsided starting profile stays finite.
fn zero_revenue_case() -> impl Strategy<Value = (CostCurve, Vec<f64>, usize, Vec<Vec<f64>>)> {
    (strict_curve(), 1usize..4, 1usize..4).prop_flat_map(|(curve, n, t)| {
        let shares = prop::collection::vec(0.05..1.0f64, n);
        let starts = prop::collection::vec(prop::collection::vec(0.01..1.0f64, t), n);
        (Just(curve), shares, Just(t), starts).prop_map(|(curve, shares, t, starts)| {
            let total: f64 = shares.iter().sum();
            let budget = 0.8 * curve.capacity();
            let rho: Vec<f64> = shares.iter().map(|s| s / total * budget).collect();
            let initial = starts
                .iter()
                .zip(&rho)
                .map(|(w, r)| {
                    let sum: f64 = w.iter().sum();
                    w.iter().map(|x| x / sum * r).collect()
                })
                .collect();
            (curve, rho, t, initial)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn schemes_share_the_zero_revenue_equilibrium((curve, rho, t, initial) in zero_revenue_case()) {
        let start = DemandProfile::new(initial).unwrap();
        let base = Scenario::zero_revenue(rho, t, PricingScheme::AverageCost, curve);
        let closed = solvers::solve_zero_revenue_closed_form(&base).unwrap();
        for scheme in SCHEMES {
            let s = base.with_scheme(scheme);
            let it = solvers::solve_iterative(&s, &start, &tight()).unwrap();
            prop_assert!(it.converged, "{scheme:?} did not converge");
            let gap = it.profile.sup_distance(&closed.profile);
            prop_assert!(gap <= 1e-8 * (1.0 + s.cost_curve.capacity()), "{scheme:?}: {gap}");
        }
    }

    #[test]
    fn block_constant_rate_demand_rises_with_rate(
        curve in strict_curve(),
        rates in prop::collection::vec(0.0..1.0f64, 2..12),
    ) {
        let (lo, hi) = (curve.base_rate(), curve.peak_rate());
        let rows: Vec<Vec<f64>> = rates.iter().map(|u| vec![(lo - 1.0 + u * (hi - lo + 2.0)).max(0.0)]).collect();
        let s = Scenario::constant_rate(rows.clone(), PricingScheme::IncreasingBlock, curve);
        let result = solvers::solve(&s, SolverChoice::ClosedForm, &SolverConfig::default()).unwrap();
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by(|&a, &b| rows[a][0].total_cmp(&rows[b][0]));
        for w in order.windows(2) {
            let (a, b) = (result.profile.get(w[0], 0), result.profile.get(w[1], 0));
            prop_assert!(a <= b + 1e-9 * (1.0 + b), "rate {} buys {a}, rate {} buys {b}", rows[w[0]][0], rows[w[1]][0]);
        }
        for (i, row) in rows.iter().enumerate() {
            if row[0] < s.cost_curve.base_rate() {
                prop_assert_eq!(result.profile.get(i, 0), 0.0);
            }
        }
    }

    #[test]
    fn solver_payments_balance_the_budget((curve, rho, t, _initial) in zero_revenue_case()) {
        for scheme in SCHEMES {
            let s = Scenario::zero_revenue(rho.clone(), t, scheme, curve.clone());
            let r = solvers::solve(&s, SolverChoice::Iterative, &SolverConfig::default()).unwrap();
            let sums = r.profile.slot_sums();
            for (slot, &x) in sums.iter().enumerate() {
                let paid: f64 = r.breakdown.payment.iter().map(|row| row[slot]).sum();
                let cost = s.cost_curve.total_cost(x).unwrap();
                prop_assert!((paid - cost).abs() <= 1e-9 * (1.0 + cost));
            }
        }
    }
}

/// Own best response in a two-slot game, checked against a grid search over
/// every split of the requirement.
#[test]
fn best_response_matches_grid_search() {
    let curve = CostCurve::linear(0.0, 2.0, 10.0).unwrap();
    let profile = DemandProfile::new(vec![vec![1.0, 1.0], vec![0.0, 2.0]]).unwrap();
    for (scheme, expected) in [
        (PricingScheme::AverageCost, 1.5),
        (PricingScheme::IncreasingBlock, 4.0 / 3.0),
    ] {
        let s = Scenario::zero_revenue(vec![2.0, 2.0], 2, scheme, curve.clone());
        let cost = |x0: f64| {
            let p = DemandProfile::new(vec![vec![x0, 2.0 - x0], vec![0.0, 2.0]]).unwrap();
            s.payoff(&p).unwrap().payment[0].iter().sum::<f64>()
        };
        let steps = 20_000;
        let (mut best_x, mut best) = (0.0, f64::INFINITY);
        for k in 0..=steps {
            let x = 2.0 * k as f64 / steps as f64;
            let c = cost(x);
            if c < best {
                best = c;
                best_x = x;
            }
        }
        let row = solvers::best_response(&s, &profile, 0).unwrap();
        assert!((row[0] + row[1] - 2.0).abs() < 1e-12);
        assert!(
            (row[0] - best_x).abs() <= 2e-4,
            "{scheme:?}: {} vs grid {best_x}",
            row[0]
        );
        assert!(cost(row[0]) <= best + 1e-12, "{scheme:?}");
        assert!((row[0] - expected).abs() < 1e-9, "{scheme:?}: {}", row[0]);
    }
}

/// Small games in every scheme and revenue model: the iterative solver's
/// output survives the brute-force deviation search.
#[test]
fn iterative_output_survives_deviation_search() {
    let curve = CostCurve::linear(5.0, 0.4, 50.0).unwrap();
    let rates = vec![
        vec![12.0, 20.0, 9.0],
        vec![15.0, 11.0, 25.0],
        vec![8.0, 18.0, 14.0],
    ];
    for scheme in SCHEMES {
        let zero = Scenario::zero_revenue(vec![30.0, 18.0, 40.0], 3, scheme, curve.clone());
        let rate = Scenario::constant_rate(rates.clone(), scheme, curve.clone());
        for s in [zero, rate] {
            let r = solvers::solve(&s, SolverChoice::Iterative, &SolverConfig::default()).unwrap();
            assert!(
                r.converged,
                "{scheme:?}/{:?}: {} sweeps, update {}",
                s.revenue_model, r.iterations, r.max_update
            );
            let cert = solvers::verify_nep(&s, &r.profile, 1e-3);
            assert!(
                cert.deviation_gain <= 1e-4 * cert.payoff_scale,
                "{scheme:?}/{:?}: gain {}",
                s.revenue_model,
                cert.deviation_gain
            );
            assert!(cert.max_residual <= 1e-6);
        }
    }
}

#[test]
fn perturbed_equilibrium_is_rejected() {
    let curve = CostCurve::linear(5.0, 0.4, 50.0).unwrap();
    let s = Scenario::zero_revenue(vec![30.0, 18.0], 2, PricingScheme::IncreasingBlock, curve);
    let r = solvers::solve(&s, SolverChoice::Auto, &SolverConfig::default()).unwrap();
    let mut rows = r.profile.rows().to_vec();
    rows[0][0] += 5.0;
    rows[0][1] -= 5.0;
    let cert = solvers::verify_nep(&s, &DemandProfile::new(rows).unwrap(), 1e-3);
    assert!(cert.deviation_gain > 0.0);
    assert!(!cert.verified);
}

#[test]
fn block_constant_rate_closed_form_agrees_with_iteration() {
    let curve = CostCurve::preset("merit-order").unwrap();
    let rates = vec![vec![30.0, 80.0], vec![55.0, 20.0], vec![95.0, 60.0]];
    let s = Scenario::constant_rate(rates, PricingScheme::IncreasingBlock, curve);
    let closed = solvers::solve(&s, SolverChoice::ClosedForm, &SolverConfig::default()).unwrap();
    let iter = solvers::solve(&s, SolverChoice::Iterative, &tight()).unwrap();
    let gap = closed.profile.sup_distance(&iter.profile);
    assert!(gap <= 1e-6 * s.cost_curve.capacity(), "{gap}");
}
