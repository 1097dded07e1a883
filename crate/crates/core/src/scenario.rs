//! The load balancing game: consumers, slots, requirements and revenues.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost_model::{CostCurve, CurveError};
use crate::pricing::{self, ConsumerSlot, PricingScheme, RivalLoad, SlotDemandView};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevenueModel {
    ZeroRevenue,
    ConstantRate,
}

impl RevenueModel {
    pub fn name(self) -> &'static str {
        match self {
            RevenueModel::ZeroRevenue => "zero_revenue",
            RevenueModel::ConstantRate => "constant_rate",
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("profile is {found_rows}x{found_cols}, scenario expects {rows}x{cols}")]
    Dimension {
        rows: usize,
        cols: usize,
        found_rows: usize,
        found_cols: usize,
    },
    #[error("profile rows must all have the same length")]
    Ragged,
    #[error("demand x[{consumer}][{slot}] = {value} is negative or not finite")]
    BadDemand {
        consumer: usize,
        slot: usize,
        value: f64,
    },
    #[error("revenue distribution needs 0 <= low <= high, got [{low}, {high}]")]
    Distribution { low: f64, high: f64 },
    #[error("scenario gives both revenue_rates and revenue_distribution")]
    RatesTwice,
    #[error("unknown cost curve preset `{0}`")]
    UnknownPreset(String),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One violated scenario invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum ValidationIssue {
    NoConsumers,
    NoSlots,
    RequirementLength {
        expected: usize,
        found: usize,
    },
    RateRows {
        expected: usize,
        found: usize,
    },
    RateColumns {
        consumer: usize,
        expected: usize,
        found: usize,
    },
    BadRequirement {
        consumer: usize,
        value: f64,
    },
    BadRate {
        consumer: usize,
        slot: usize,
        value: f64,
    },
    /// Total daily requirement exceeds what the slots can supply.
    Infeasible {
        total_requirement: f64,
        total_capacity: f64,
    },
    /// Constant-rate revenue assumes no minimum daily requirement.
    ConstantRateWithRequirement {
        consumer: usize,
        value: f64,
    },
    /// Zero-revenue model with a non-zero revenue rate.
    ZeroRevenueWithRate {
        consumer: usize,
        slot: usize,
        value: f64,
    },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ValidationIssue::*;
        match self {
            NoConsumers => write!(f, "scenario has no consumers"),
            NoSlots => write!(f, "scenario has no time slots"),
            RequirementLength { expected, found } => write!(
                f,
                "daily_requirement has {found} entries, expected {expected}"
            ),
            RateRows { expected, found } => {
                write!(f, "revenue_rates has {found} rows, expected {expected}")
            }
            RateColumns {
                consumer,
                expected,
                found,
            } => write!(
                f,
                "revenue_rates row {consumer} has {found} entries, expected {expected}"
            ),
            BadRequirement { consumer, value } => write!(
                f,
                "daily requirement of consumer {consumer} is {value}; must be finite and >= 0"
            ),
            BadRate {
                consumer,
                slot,
                value,
            } => write!(
                f,
                "revenue rate r[{consumer}][{slot}] = {value}; must be finite and >= 0"
            ),
            Infeasible {
                total_requirement,
                total_capacity,
            } => write!(
                f,
                "infeasible: total requirement {total_requirement} MWh exceeds total capacity {total_capacity} MWh"
            ),
            ConstantRateWithRequirement { consumer, value } => write!(
                f,
                "constant-rate revenue model assumes zero daily requirement, consumer {consumer} has {value}"
            ),
            ZeroRevenueWithRate {
                consumer,
                slot,
                value,
            } => write!(
                f,
                "zero-revenue model requires zero revenue rates, r[{consumer}][{slot}] = {value}"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn is_infeasible(&self) -> bool {
        self.issues
            .iter()
            .any(|i| matches!(i, ValidationIssue::Infeasible { .. }))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for issue in &self.issues {
            writeln!(f, "{issue}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub num_consumers: usize,
    pub num_slots: usize,
    /// Minimum daily energy per consumer [MWh].
    pub daily_requirement: Vec<f64>,
    /// Revenue per MWh consumed, `[consumer][slot]` [$/MWh].
    pub revenue_rates: Vec<Vec<f64>>,
    pub pricing_scheme: PricingScheme,
    pub revenue_model: RevenueModel,
    pub cost_curve: CostCurve,
}

impl Scenario {
    /// Zero-revenue game: every consumer must buy its daily requirement.
    pub fn zero_revenue(
        daily_requirement: Vec<f64>,
        num_slots: usize,
        pricing_scheme: PricingScheme,
        cost_curve: CostCurve,
    ) -> Self {
        let n = daily_requirement.len();
        Self {
            num_consumers: n,
            num_slots,
            daily_requirement,
            revenue_rates: vec![vec![0.0; num_slots]; n],
            pricing_scheme,
            revenue_model: RevenueModel::ZeroRevenue,
            cost_curve,
        }
    }

    /// Constant-rate revenue game with no daily requirement.
    pub fn constant_rate(
        revenue_rates: Vec<Vec<f64>>,
        pricing_scheme: PricingScheme,
        cost_curve: CostCurve,
    ) -> Self {
        let n = revenue_rates.len();
        let t = revenue_rates.first().map_or(0, Vec::len);
        Self {
            num_consumers: n,
            num_slots: t,
            daily_requirement: vec![0.0; n],
            revenue_rates,
            pricing_scheme,
            revenue_model: RevenueModel::ConstantRate,
            cost_curve,
        }
    }

    pub fn with_scheme(&self, scheme: PricingScheme) -> Self {
        Self {
            pricing_scheme: scheme,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> ValidationReport {
        use ValidationIssue::*;
        let mut issues = Vec::new();
        let (n, t) = (self.num_consumers, self.num_slots);
        if n == 0 {
            issues.push(NoConsumers);
        }
        if t == 0 {
            issues.push(NoSlots);
        }
        if self.daily_requirement.len() != n {
            issues.push(RequirementLength {
                expected: n,
                found: self.daily_requirement.len(),
            });
        }
        if self.revenue_rates.len() != n {
            issues.push(RateRows {
                expected: n,
                found: self.revenue_rates.len(),
            });
        }
        for (consumer, row) in self.revenue_rates.iter().enumerate() {
            if row.len() != t {
                issues.push(RateColumns {
                    consumer,
                    expected: t,
                    found: row.len(),
                });
            }
            for (slot, &value) in row.iter().enumerate() {
                if !(value.is_finite() && value >= 0.0) {
                    issues.push(BadRate {
                        consumer,
                        slot,
                        value,
                    });
                } else if value != 0.0 && self.revenue_model == RevenueModel::ZeroRevenue {
                    issues.push(ZeroRevenueWithRate {
                        consumer,
                        slot,
                        value,
                    });
                }
            }
        }
        for (consumer, &value) in self.daily_requirement.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                issues.push(BadRequirement { consumer, value });
            } else if value != 0.0 && self.revenue_model == RevenueModel::ConstantRate {
                issues.push(ConstantRateWithRequirement { consumer, value });
            }
        }
        let total_requirement: f64 = self.daily_requirement.iter().sum();
        let total_capacity = t as f64 * self.cost_curve.capacity();
        if total_requirement > total_capacity {
            issues.push(Infeasible {
                total_requirement,
                total_capacity,
            });
        }
        ValidationReport { issues }
    }

    pub fn rate(&self, i: usize, t: usize) -> f64 {
        match self.revenue_model {
            RevenueModel::ZeroRevenue => 0.0,
            RevenueModel::ConstantRate => self.revenue_rates[i][t],
        }
    }

    fn check_dims(&self, profile: &DemandProfile) -> Result<(), ScenarioError> {
        if profile.num_consumers() != self.num_consumers || profile.num_slots() != self.num_slots {
            return Err(ScenarioError::Dimension {
                rows: self.num_consumers,
                cols: self.num_slots,
                found_rows: profile.num_consumers(),
                found_cols: profile.num_slots(),
            });
        }
        Ok(())
    }

    /// Consumer `i`'s slot-`t` cost with everyone else held at `profile`.
    pub fn consumer_slot(&self, profile: &DemandProfile, i: usize, t: usize) -> ConsumerSlot<'_> {
        let others = (0..self.num_consumers)
            .filter(|&j| j != i)
            .map(|j| profile.get(j, t))
            .collect();
        ConsumerSlot::new(
            &self.cost_curve,
            self.pricing_scheme,
            RivalLoad::new(others),
        )
    }

    /// Revenues, payments and payoffs of every consumer at `profile`.
    pub fn payoff(&self, profile: &DemandProfile) -> Result<PayoffBreakdown, ScenarioError> {
        self.check_dims(profile)?;
        let (n, t_count) = (self.num_consumers, self.num_slots);
        let mut revenue = vec![vec![0.0; t_count]; n];
        let mut payment = vec![vec![0.0; t_count]; n];
        for t in 0..t_count {
            let view = profile.slot_view(t);
            for i in 0..n {
                payment[i][t] = pricing::payment(&self.cost_curve, &view, i, self.pricing_scheme);
                revenue[i][t] = self.rate(i, t) * profile.get(i, t);
            }
        }
        let payoff = (0..n)
            .map(|i| {
                (0..t_count)
                    .map(|t| revenue[i][t] - payment[i][t])
                    .sum::<f64>()
            })
            .collect();
        Ok(PayoffBreakdown {
            revenue,
            payment,
            payoff,
        })
    }
}

/// Strategy matrix `x[consumer][slot]` in MWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandProfile {
    demand: Vec<Vec<f64>>,
}

impl DemandProfile {
    pub fn new(demand: Vec<Vec<f64>>) -> Result<Self, ScenarioError> {
        let cols = demand.first().map_or(0, Vec::len);
        for (consumer, row) in demand.iter().enumerate() {
            if row.len() != cols {
                return Err(ScenarioError::Ragged);
            }
            for (slot, &value) in row.iter().enumerate() {
                if !(value.is_finite() && value >= 0.0) {
                    return Err(ScenarioError::BadDemand {
                        consumer,
                        slot,
                        value,
                    });
                }
            }
        }
        Ok(Self { demand })
    }

    pub fn zeros(n: usize, t: usize) -> Self {
        Self {
            demand: vec![vec![0.0; t]; n],
        }
    }

    /// `x[i][t] = rho_i / T`.
    pub fn uniform(daily_requirement: &[f64], t: usize) -> Self {
        Self {
            demand: daily_requirement
                .iter()
                .map(|&r| vec![r / t as f64; t])
                .collect(),
        }
    }

    pub fn num_consumers(&self) -> usize {
        self.demand.len()
    }

    pub fn num_slots(&self) -> usize {
        self.demand.first().map_or(0, Vec::len)
    }

    pub fn get(&self, i: usize, t: usize) -> f64 {
        self.demand[i][t]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.demand[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.demand
    }

    pub(crate) fn set_row(&mut self, i: usize, row: Vec<f64>) {
        self.demand[i] = row;
    }

    pub fn slot(&self, t: usize) -> Vec<f64> {
        self.demand.iter().map(|row| row[t]).collect()
    }

    pub fn slot_view(&self, t: usize) -> SlotDemandView {
        SlotDemandView::new(self.slot(t))
    }

    /// `X_t` for every slot.
    pub fn slot_sums(&self) -> Vec<f64> {
        (0..self.num_slots())
            .map(|t| self.demand.iter().map(|row| row[t]).sum())
            .collect()
    }

    pub fn consumer_total(&self, i: usize) -> f64 {
        self.demand[i].iter().sum()
    }

    /// Largest entrywise difference to `other`.
    pub fn sup_distance(&self, other: &DemandProfile) -> f64 {
        self.demand
            .iter()
            .zip(&other.demand)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    /// Checks non-negativity, the demand constraint (to `tol`) and the
    /// capacity cap against `scenario`.
    pub fn is_feasible(&self, scenario: &Scenario, tol: f64) -> bool {
        if scenario.check_dims(self).is_err() {
            return false;
        }
        let cap = scenario.cost_curve.capacity();
        self.demand.iter().enumerate().all(|(i, row)| {
            row.iter().all(|&x| x >= 0.0 && x <= cap)
                && row.iter().sum::<f64>() >= scenario.daily_requirement[i] - tol
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PayoffBreakdown {
    /// `R[i][t]` [$]
    pub revenue: Vec<Vec<f64>>,
    /// `P[i][t]` [$]
    pub payment: Vec<Vec<f64>>,
    /// `pi_i = sum_t (R - P)` [$]
    pub payoff: Vec<f64>,
}

/// Seeded generator for revenue rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevenueDistribution {
    Uniform { low: f64, high: f64, seed: u64 },
}

impl RevenueDistribution {
    /// Draws an `n x t` matrix, consumer-major.
    pub fn sample(&self, n: usize, t: usize) -> Result<Vec<Vec<f64>>, ScenarioError> {
        match *self {
            RevenueDistribution::Uniform { low, high, seed } => {
                if !(low >= 0.0 && high >= low && high.is_finite()) {
                    return Err(ScenarioError::Distribution { low, high });
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Ok((0..n)
                    .map(|_| {
                        (0..t)
                            .map(|_| low + (high - low) * rng.gen::<f64>())
                            .collect()
                    })
                    .collect())
            }
        }
    }
}

/// A cost curve given inline or by preset name.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CurveSource {
    Preset { preset: String },
    Inline(CostCurve),
}

impl CurveSource {
    pub fn resolve(&self) -> Result<CostCurve, ScenarioError> {
        match self {
            CurveSource::Preset { preset } => CostCurve::preset(preset)
                .ok_or_else(|| ScenarioError::UnknownPreset(preset.clone())),
            CurveSource::Inline(c) => Ok(c.clone()),
        }
    }
}

/// On-disk scenario document (JSON).
///
/// Revenue rates are either listed explicitly or drawn from a seeded
/// distribution; omitting both gives all-zero rates.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub num_consumers: usize,
    pub num_slots: usize,
    #[serde(default)]
    pub daily_requirement: Option<Vec<f64>>,
    #[serde(default)]
    pub revenue_rates: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub revenue_distribution: Option<RevenueDistribution>,
    pub pricing_scheme: PricingScheme,
    pub revenue_model: RevenueModel,
    pub cost_curve: CurveSource,
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn into_scenario(self) -> Result<Scenario, ScenarioError> {
        let (n, t) = (self.num_consumers, self.num_slots);
        let revenue_rates = match (self.revenue_rates, self.revenue_distribution) {
            (Some(_), Some(_)) => return Err(ScenarioError::RatesTwice),
            (Some(r), None) => r,
            (None, Some(d)) => d.sample(n, t)?,
            (None, None) => vec![vec![0.0; t]; n],
        };
        Ok(Scenario {
            num_consumers: n,
            num_slots: t,
            daily_requirement: self.daily_requirement.unwrap_or_else(|| vec![0.0; n]),
            revenue_rates,
            pricing_scheme: self.pricing_scheme,
            revenue_model: self.revenue_model,
            cost_curve: self.cost_curve.resolve()?,
        })
    }
}
