//! Nash equilibrium solvers for the four pricing-scheme x revenue-model cases.
//!
//! | scheme / model          | solver                                    |
//! |-------------------------|-------------------------------------------|
//! | either / zero revenue   | [`solve_zero_revenue_closed_form`]        |
//! | average / constant rate | [`solve_avg_constant_revenue`]            |
//! | block / constant rate   | [`solve_block_constant_revenue`]          |
//! | any                     | [`solve_iterative`] (damped best response)|
//!
//! Every solver returns an [`EquilibriumResult`]; [`verify_nep`] produces the
//! matching [`NepCertificate`] from first-order residuals plus a brute-force
//! search over unilateral deviations.

mod best_response;
mod certificate;
mod closed_form;
mod iterative;

pub use best_response::best_response;
pub use certificate::{
    condition_residuals, verify_nep, verify_nep_with, NepCertificate, VerifyConfig,
};
pub use closed_form::{
    block_slot_fixed_point, solve_avg_constant_revenue, solve_block_constant_revenue,
    solve_zero_revenue_closed_form, SlotIteration,
};
pub use iterative::solve_iterative;

use serde::Serialize;
use thiserror::Error;

use crate::pricing::{self, PricingScheme};
use crate::scenario::{
    DemandProfile, PayoffBreakdown, RevenueModel, Scenario, ScenarioError, ValidationReport,
};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("scenario is invalid:\n{0}")]
    Invalid(ValidationReport),
    #[error("{solver} needs {expected}, scenario is {found}")]
    WrongCase {
        solver: &'static str,
        expected: &'static str,
        found: String,
    },
    #[error("closed form needs a strictly convex cost curve; use the iterative solver")]
    NotStrict,
    #[error("consumer {consumer} cannot meet its requirement {requirement} MWh with {available} MWh of finite-cost supply")]
    Infeasible {
        consumer: usize,
        requirement: f64,
        available: f64,
    },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverConfig {
    /// Weight on the best response in `x <- (1 - g) x + g BR(x)`.
    pub damping: f64,
    /// Sup-norm update [MWh] below which iteration stops.
    pub tol: f64,
    pub max_iterations: usize,
    /// Relative bound on first-order residuals for a converged result.
    pub residual_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tol: 1e-8,
            max_iterations: 100_000,
            residual_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Uniqueness {
    Unique,
    /// Tied top revenue rates; the reported profile is one representative.
    NonUnique,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    ZeroRevenueClosedForm,
    AverageConstantRate,
    BlockConstantRate,
    Iterative,
}

/// Unit prices at the equilibrium.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceSchedule {
    /// `A(X_t)` per slot.
    PerSlot(Vec<f64>),
    /// `M(x_it, x_t)` per consumer and slot.
    PerConsumer(Vec<Vec<f64>>),
}

impl PriceSchedule {
    pub fn at(&self, i: usize, t: usize) -> f64 {
        match self {
            PriceSchedule::PerSlot(p) => p[t],
            PriceSchedule::PerConsumer(p) => p[i][t],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumResult {
    pub profile: DemandProfile,
    pub prices: PriceSchedule,
    pub breakdown: PayoffBreakdown,
    /// Sweeps that still moved the profile by more than the tolerance.
    pub iterations: usize,
    pub converged: bool,
    /// Last sup-norm change [MWh].
    pub max_update: f64,
    pub uniqueness: Uniqueness,
    pub solver: SolverKind,
    /// Sup-norm update per sweep.
    pub trace: Vec<f64>,
}

/// Prices faced by each consumer at `profile`.
pub fn price_schedule(scenario: &Scenario, profile: &DemandProfile) -> PriceSchedule {
    let curve = &scenario.cost_curve;
    match scenario.pricing_scheme {
        PricingScheme::AverageCost => PriceSchedule::PerSlot(
            profile
                .slot_sums()
                .into_iter()
                .map(|x| curve.average_unchecked(x))
                .collect(),
        ),
        PricingScheme::IncreasingBlock => {
            let mut out = vec![vec![0.0; scenario.num_slots]; scenario.num_consumers];
            for t in 0..scenario.num_slots {
                let view = profile.slot_view(t);
                for (i, row) in out.iter_mut().enumerate() {
                    row[t] = pricing::marginal_payment_block(curve, &view, i).lo;
                }
            }
            PriceSchedule::PerConsumer(out)
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn assemble(
    scenario: &Scenario,
    profile: DemandProfile,
    iterations: usize,
    converged: bool,
    max_update: f64,
    uniqueness: Uniqueness,
    solver: SolverKind,
    trace: Vec<f64>,
) -> Result<EquilibriumResult, SolverError> {
    let breakdown = scenario.payoff(&profile)?;
    let prices = price_schedule(scenario, &profile);
    Ok(EquilibriumResult {
        profile,
        prices,
        breakdown,
        iterations,
        converged,
        max_update,
        uniqueness,
        solver,
        trace,
    })
}

pub(crate) fn require_valid(scenario: &Scenario) -> Result<(), SolverError> {
    let report = scenario.validate();
    if report.is_valid() {
        Ok(())
    } else {
        Err(SolverError::Invalid(report))
    }
}

pub(crate) fn case_name(scenario: &Scenario) -> String {
    format!(
        "{}/{}",
        scenario.pricing_scheme.name(),
        scenario.revenue_model.name()
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    /// Closed form where one applies, iteration otherwise.
    #[default]
    Auto,
    ClosedForm,
    Iterative,
}

/// Default starting point: uniform split for zero revenue, idle otherwise.
pub fn default_initial(scenario: &Scenario) -> DemandProfile {
    match scenario.revenue_model {
        RevenueModel::ZeroRevenue => {
            DemandProfile::uniform(&scenario.daily_requirement, scenario.num_slots)
        }
        RevenueModel::ConstantRate => {
            DemandProfile::zeros(scenario.num_consumers, scenario.num_slots)
        }
    }
}

/// Runs the solver that fits the scenario's case.
pub fn solve(
    scenario: &Scenario,
    choice: SolverChoice,
    config: &SolverConfig,
) -> Result<EquilibriumResult, SolverError> {
    require_valid(scenario)?;
    let iterate = || solve_iterative(scenario, &default_initial(scenario), config);
    match (choice, scenario.revenue_model, scenario.pricing_scheme) {
        (SolverChoice::Iterative, _, _) => iterate(),
        (SolverChoice::Auto, RevenueModel::ZeroRevenue, _) if !scenario.cost_curve.is_strict() => {
            iterate()
        }
        (_, RevenueModel::ZeroRevenue, _) => solve_zero_revenue_closed_form(scenario),
        (_, RevenueModel::ConstantRate, PricingScheme::AverageCost) => {
            solve_avg_constant_revenue(scenario)
        }
        (_, RevenueModel::ConstantRate, PricingScheme::IncreasingBlock) => {
            solve_block_constant_revenue(scenario, config)
        }
    }
}
