//! Demand-response game between electricity consumers sharing a retailer
//! whose wholesale cost is a piecewise-linear merit-order curve.
//!
//! * [`cost_model`]: marginal, total and average cost curves
//! * [`scenario`]: consumers, slots, revenue models and demand profiles
//! * [`pricing`]: average-cost and increasing-block payment kernels
//! * [`solvers`]: Nash equilibria and their certificates
//! * [`flow_checks`]: sampled checks of the flow-game assumptions

pub mod cost_model;
pub mod flow_checks;
pub mod pricing;
pub mod scenario;
pub mod solvers;

pub use cost_model::{Breakpoint, CostCurve, CurveError};
pub use pricing::PricingScheme;
pub use scenario::{DemandProfile, RevenueModel, Scenario, ScenarioFile};
pub use solvers::{EquilibriumResult, NepCertificate, SolverConfig, SolverError};
