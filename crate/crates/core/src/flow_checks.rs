//! Sampling checks of the link-cost assumptions behind the splittable flow
//! view of the game.
//!
//! Each slot is one parallel link between a source and a sink; consumer `i`
//! routes `x_it` over link `t` and pays the link cost `J_it = P_it - R_it`.
//! The checks below look for counterexamples to the standard assumptions on
//! these link costs:
//!
//! * G1 the consumer's cost is a sum of per-link costs
//! * G2 link costs are continuous where finite
//! * G3 link costs are convex in the own flow
//! * G4 link costs are continuously differentiable where finite
//! * G5 total demand fits within total capacity
//! * A1 the link cost depends only on the own flow `x` and the link total `X`
//! * A2 that cost `J(x, X)` is non-negative and non-decreasing in both arguments
//! * A3 `K(x, X) = dJ(x, X)/dx` is strictly increasing in both arguments
//!
//! A check that holds means no counterexample was found among the samples.
//! Every counterexample can be replayed through [`crate::pricing`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cost_model::CostCurve;
use crate::pricing::{self, PricingScheme, SlotDemandView};
use crate::scenario::{RevenueModel, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Assumption {
    G1,
    G2,
    G3,
    G4,
    G5,
    A1,
    A2,
    A3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeConfig {
    pub samples: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            samples: 10_000,
            seed: 0,
        }
    }
}

/// A sampled violation. Demands are full slot vectors with the probed
/// consumer at index 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Counterexample {
    /// Payment changes by more than the Lipschitz bound between two nearby
    /// own demands.
    Jump {
        rivals: Vec<f64>,
        from: f64,
        to: f64,
        bound: f64,
    },
    /// `P((a + b) / 2) > (P(a) + P(b)) / 2`.
    NonConvex { rivals: Vec<f64>, a: f64, b: f64 },
    /// Left and right difference quotients at `x` disagree.
    Kink { rivals: Vec<f64>, x: f64, step: f64 },
    Capacity {
        total_requirement: f64,
        total_capacity: f64,
    },
    /// Same own demand and slot total, different payments.
    SplitDependence {
        own: f64,
        first_rivals: Vec<f64>,
        second_rivals: Vec<f64>,
    },
    /// `J(x, X)` with `(own, total)` moved to `(own_after, total_after)`,
    /// both coordinates weakly larger, lowered the value.
    Decreasing {
        own: f64,
        total: f64,
        own_after: f64,
        total_after: f64,
    },
    /// `K(x, X)` did not strictly increase between the two points.
    NotStrictlyIncreasing {
        own: f64,
        total: f64,
        own_after: f64,
        total_after: f64,
    },
    /// Midpoint test of `X A(X) = C(X)`.
    CostNotStrictlyConvex { a: f64, b: f64 },
}

fn slot(own: f64, rivals: &[f64]) -> SlotDemandView {
    let mut d = Vec::with_capacity(rivals.len() + 1);
    d.push(own);
    d.extend_from_slice(rivals);
    SlotDemandView::new(d)
}

fn own_payment(curve: &CostCurve, scheme: PricingScheme, own: f64, rivals: &[f64]) -> f64 {
    pricing::payment(curve, &slot(own, rivals), 0, scheme)
}

/// `J(x, X) = x A(X)`.
fn reduced_cost(curve: &CostCurve, own: f64, total: f64) -> f64 {
    pricing::payment_average(curve, &slot(own, &[total - own]), 0)
}

/// `K(x, X)`: derivative of `x A(X)` in `x` with `X` fixed, which is `A(X)`.
fn reduced_marginal(curve: &CostCurve, _own: f64, total: f64) -> f64 {
    curve.average_unchecked(total)
}

fn convexity_slack(pa: f64, pb: f64, pm: f64) -> f64 {
    pm - 0.5 * (pa + pb) - 1e-9 * pa.abs().max(pb.abs()).max(1.0)
}

fn kink_gap(curve: &CostCurve, scheme: PricingScheme, rivals: &[f64], x: f64, h: f64) -> f64 {
    let p = |v: f64| own_payment(curve, scheme, v, rivals);
    let left = (p(x) - p(x - h)) / h;
    let right = (p(x + h) - p(x)) / h;
    (right - left).abs()
}

fn kink_tolerance(curve: &CostCurve, h: f64) -> f64 {
    // curvature of the payment is at most a few times the steepest slope of
    // the marginal cost, which bounds the second-order error of the quotients
    let steepest = curve
        .breakpoints()
        .windows(2)
        .filter(|w| w[1].quantity > w[0].quantity)
        .map(|w| (w[1].marginal_rate - w[0].marginal_rate) / (w[1].quantity - w[0].quantity))
        .fold(0.0, f64::max);
    1e-6 * curve.peak_rate().max(1.0) + 8.0 * steepest * h
}

impl Counterexample {
    /// Recomputes the violation; true when it still shows.
    pub fn replay(&self, curve: &CostCurve, scheme: PricingScheme) -> bool {
        match self {
            Counterexample::Jump {
                rivals,
                from,
                to,
                bound,
            } => {
                let d = own_payment(curve, scheme, *to, rivals)
                    - own_payment(curve, scheme, *from, rivals);
                d.abs() > *bound
            }
            Counterexample::NonConvex { rivals, a, b } => {
                let p = |v: f64| own_payment(curve, scheme, v, rivals);
                convexity_slack(p(*a), p(*b), p(0.5 * (a + b))) > 0.0
            }
            Counterexample::Kink { rivals, x, step } => {
                kink_gap(curve, scheme, rivals, *x, *step) > kink_tolerance(curve, *step)
            }
            Counterexample::Capacity {
                total_requirement,
                total_capacity,
            } => total_requirement > total_capacity,
            Counterexample::SplitDependence {
                own,
                first_rivals,
                second_rivals,
            } => {
                let a = own_payment(curve, scheme, *own, first_rivals);
                let b = own_payment(curve, scheme, *own, second_rivals);
                (a - b).abs() > 1e-9 * a.abs().max(b.abs()).max(1.0)
            }
            Counterexample::Decreasing {
                own,
                total,
                own_after,
                total_after,
            } => {
                let before = reduced_cost(curve, *own, *total);
                let after = reduced_cost(curve, *own_after, *total_after);
                after < before - 1e-12 * before.abs().max(1.0)
            }
            Counterexample::NotStrictlyIncreasing {
                own,
                total,
                own_after,
                total_after,
            } => {
                reduced_marginal(curve, *own_after, *total_after)
                    <= reduced_marginal(curve, *own, *total)
            }
            Counterexample::CostNotStrictlyConvex { a, b } => {
                let c = |q: f64| curve.total_unchecked(q);
                let gap = 0.5 * (c(*a) + c(*b)) - c(0.5 * (a + b));
                gap <= 1e-12 * c(*a).abs().max(c(*b).abs()).max(1.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionResult {
    pub assumption: Assumption,
    pub holds: bool,
    pub counterexample: Option<Counterexample>,
    pub note: String,
}

impl AssumptionResult {
    fn new(assumption: Assumption, counterexample: Option<Counterexample>, note: &str) -> Self {
        Self {
            assumption,
            holds: counterexample.is_none(),
            counterexample,
            note: note.to_string(),
        }
    }
}

/// Verdicts of one batch of checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkCostProbe {
    pub scheme: PricingScheme,
    pub model: Option<RevenueModel>,
    pub samples: usize,
    pub seed: u64,
    pub results: Vec<AssumptionResult>,
}

impl LinkCostProbe {
    pub fn get(&self, assumption: Assumption) -> Option<&AssumptionResult> {
        self.results.iter().find(|r| r.assumption == assumption)
    }

    pub fn holds(&self, assumption: Assumption) -> Option<bool> {
        self.get(assumption).map(|r| r.holds)
    }
}

/// Random slot: one to three rivals and an own demand, all with finite
/// payment.
struct Sampler<'a> {
    rng: ChaCha8Rng,
    curve: &'a CostCurve,
    scheme: PricingScheme,
}

impl<'a> Sampler<'a> {
    fn new(curve: &'a CostCurve, scheme: PricingScheme, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            curve,
            scheme,
        }
    }

    fn rivals(&mut self) -> Vec<f64> {
        let m = self.rng.gen_range(1..=3);
        let share = self.curve.capacity() / (m + 1) as f64;
        (0..m).map(|_| share * self.rng.gen::<f64>()).collect()
    }

    fn own_limit(&self, rivals: &[f64]) -> f64 {
        pricing::RivalLoad::new(rivals.to_vec()).max_finite_demand(self.curve, self.scheme)
    }

    fn unit(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }
}

/// G1-G5 for the scenario's scheme and curve.
pub fn check_g(scenario: &Scenario, config: &ProbeConfig) -> LinkCostProbe {
    let curve = &scenario.cost_curve;
    let scheme = scenario.pricing_scheme;
    let mut sampler = Sampler::new(curve, scheme, config.seed);
    let cap = curve.capacity();
    let lipschitz = curve.peak_rate();
    let h = 1e-7 * cap;

    let mut g2 = None;
    let mut g3 = None;
    let mut g4 = None;
    for _ in 0..config.samples {
        let rivals = sampler.rivals();
        let limit = sampler.own_limit(&rivals);
        let a = limit * sampler.unit();
        let b = limit * sampler.unit();
        let p = |v: f64| own_payment(curve, scheme, v, &rivals);
        if g2.is_none() {
            let to = (a + h).min(limit);
            let bound = lipschitz * (to - a) * (1.0 + 1e-9) + 1e-12 * p(a).abs().max(1.0);
            if (p(to) - p(a)).abs() > bound {
                g2 = Some(Counterexample::Jump {
                    rivals: rivals.clone(),
                    from: a,
                    to,
                    bound,
                });
            }
        }
        if g3.is_none() && convexity_slack(p(a), p(b), p(0.5 * (a + b))) > 0.0 {
            g3 = Some(Counterexample::NonConvex {
                rivals: rivals.clone(),
                a,
                b,
            });
        }
        if g4.is_none()
            && a > h
            && a + h < limit
            && kink_gap(curve, scheme, &rivals, a, h) > kink_tolerance(curve, h)
        {
            g4 = Some(Counterexample::Kink {
                rivals: rivals.clone(),
                x: a,
                step: h,
            });
        }
    }
    // Random points almost never land on a jump of the marginal cost, so
    // probe each one directly: the consumer and one equal rival put the
    // marginal price argument exactly on the jump under both schemes.
    if g4.is_none() {
        for q in curve.jump_points() {
            let x = 0.5 * q;
            let step = 1e-7 * q;
            let rivals = vec![x];
            if kink_gap(curve, scheme, &rivals, x, step) > kink_tolerance(curve, step) {
                g4 = Some(Counterexample::Kink { rivals, x, step });
                break;
            }
        }
    }

    let total_requirement: f64 = scenario.daily_requirement.iter().sum();
    let total_capacity = scenario.num_slots as f64 * cap;
    let g5 = (total_requirement > total_capacity).then_some(Counterexample::Capacity {
        total_requirement,
        total_capacity,
    });

    LinkCostProbe {
        scheme,
        model: Some(scenario.revenue_model),
        samples: config.samples,
        seed: config.seed,
        results: vec![
            AssumptionResult::new(
                Assumption::G1,
                None,
                "a consumer's cost is the sum of its slot costs by construction",
            ),
            AssumptionResult::new(
                Assumption::G2,
                g2,
                "Lipschitz test on the finite-cost region",
            ),
            AssumptionResult::new(Assumption::G3, g3, "midpoint convexity in the own demand"),
            AssumptionResult::new(
                Assumption::G4,
                g4,
                "one-sided difference quotients, including jumps of the marginal cost",
            ),
            AssumptionResult::new(
                Assumption::G5,
                g5,
                "total requirement against total capacity",
            ),
        ],
    }
}

/// A1-A3 for a pricing scheme on `curve`.
pub fn check_a(scheme: PricingScheme, curve: &CostCurve, config: &ProbeConfig) -> LinkCostProbe {
    let mut sampler = Sampler::new(curve, scheme, config.seed);
    let cap = curve.capacity();

    let mut a1 = None;
    for _ in 0..config.samples {
        let mut rivals = sampler.rivals();
        if rivals.len() < 2 {
            rivals.push(0.0);
        }
        let own = sampler.own_limit(&rivals) * sampler.unit();
        // move mass between the first two rivals, keeping the total
        let pair = rivals[0] + rivals[1];
        let mut moved = rivals.clone();
        moved[0] = pair * sampler.unit();
        moved[1] = pair - moved[0];
        let a = own_payment(curve, scheme, own, &rivals);
        let b = own_payment(curve, scheme, own, &moved);
        if a.is_finite() && b.is_finite() && (a - b).abs() > 1e-9 * a.abs().max(b.abs()).max(1.0) {
            a1 = Some(Counterexample::SplitDependence {
                own,
                first_rivals: rivals,
                second_rivals: moved,
            });
            break;
        }
    }
    if a1.is_none() {
        // concentrated versus evenly spread rivals at a quarter of capacity
        let own = 0.125 * cap;
        let first = vec![2.0 * own, 0.0];
        let second = vec![own, own];
        let candidate = Counterexample::SplitDependence {
            own,
            first_rivals: first,
            second_rivals: second,
        };
        if candidate.replay(curve, scheme) {
            a1 = Some(candidate);
        }
    }

    let mut results = vec![AssumptionResult::new(
        Assumption::A1,
        a1.clone(),
        "payments compared across rival splits with equal slot totals",
    )];
    if a1.is_some() {
        let note = "needs A1: the payment is not a function of own demand and slot total";
        results.push(AssumptionResult {
            assumption: Assumption::A2,
            holds: false,
            counterexample: None,
            note: note.to_string(),
        });
        results.push(AssumptionResult {
            assumption: Assumption::A3,
            holds: false,
            counterexample: None,
            note: note.to_string(),
        });
    } else {
        let mut a2 = None;
        let mut a3 = None;
        for _ in 0..config.samples {
            let total = cap * sampler.unit();
            let own = total * sampler.unit();
            let total_after = total + (cap - total) * sampler.unit();
            let own_after = own + (total_after - total) * sampler.unit();
            if a2.is_none() {
                let candidate = Counterexample::Decreasing {
                    own,
                    total,
                    own_after,
                    total_after,
                };
                if reduced_cost(curve, own, total) < 0.0 || candidate.replay(curve, scheme) {
                    a2 = Some(candidate);
                }
            }
            if a3.is_none() {
                // first argument alone, then the second
                for (oa, ta) in [(own_after.min(total), total), (own, total_after)] {
                    if (oa, ta) == (own, total) {
                        continue;
                    }
                    let candidate = Counterexample::NotStrictlyIncreasing {
                        own,
                        total,
                        own_after: oa,
                        total_after: ta,
                    };
                    if candidate.replay(curve, scheme) {
                        a3 = Some(candidate);
                        break;
                    }
                }
            }
        }
        results.push(AssumptionResult::new(
            Assumption::A2,
            a2,
            "J(x, X) = x A(X) sampled for sign and monotonicity",
        ));
        results.push(AssumptionResult::new(
            Assumption::A3,
            a3,
            "K(x, X) = A(X) sampled for strict increase in each argument",
        ));
    }
    LinkCostProbe {
        scheme,
        model: None,
        samples: config.samples,
        seed: config.seed,
        results,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SemiConvexity {
    /// `X A(X)` passed every midpoint convexity test.
    pub semi_convex: bool,
    /// ... with a strict margin.
    pub strictly_semi_convex: bool,
    pub counterexample: Option<Counterexample>,
}

/// Midpoint tests of `X A(X) = C(X)`: random pairs over `[0, capacity]`
/// plus the two ends of every linear piece of the marginal cost.
pub fn semi_convexity_check(curve: &CostCurve, config: &ProbeConfig) -> SemiConvexity {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let cap = curve.capacity();
    let mut pairs: Vec<(f64, f64)> = curve
        .breakpoints()
        .windows(2)
        .filter(|w| w[1].quantity > w[0].quantity && w[0].quantity < cap)
        .map(|w| (w[0].quantity, w[1].quantity.min(cap)))
        .collect();
    let last = curve.breakpoints().last().unwrap().quantity;
    if last < cap {
        pairs.push((last, cap));
    }
    pairs.extend((0..config.samples).map(|_| (cap * rng.gen::<f64>(), cap * rng.gen::<f64>())));

    let c = |q: f64| curve.total_unchecked(q);
    let mut semi_convex = true;
    let mut counterexample = None;
    for (a, b) in pairs {
        if a == b {
            continue;
        }
        let gap = 0.5 * (c(a) + c(b)) - c(0.5 * (a + b));
        let scale = c(a).abs().max(c(b).abs()).max(1.0);
        if gap < -1e-12 * scale {
            semi_convex = false;
        }
        if counterexample.is_none() && gap <= 1e-12 * scale {
            counterexample = Some(Counterexample::CostNotStrictlyConvex { a, b });
        }
    }
    SemiConvexity {
        semi_convex,
        strictly_semi_convex: counterexample.is_none(),
        counterexample,
    }
}
