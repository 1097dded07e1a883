//! Participation sweep: many consumers with uniformly drawn revenue rates
//! share one slot under increasing-block pricing.

use std::fs;
use std::path::Path;

use anyhow::Context;
use loadgame::cost_model::CostCurve;
use loadgame::pricing::PricingScheme;
use loadgame::scenario::{RevenueDistribution, Scenario};
use loadgame::solvers::{self, SolverConfig, VerifyConfig};

use crate::report::{self, num, Metadata};
use crate::{Failure, Outcome};

pub struct Fig5Config {
    pub n: usize,
    pub seed: u64,
    /// Preset name or cost-curve file.
    pub curve: String,
    pub low: f64,
    pub high: f64,
}

fn load_curve(source: &str) -> Result<CostCurve, Failure> {
    if let Some(curve) = CostCurve::preset(source) {
        return Ok(curve);
    }
    if !Path::new(source).exists() {
        return Err(Failure::Invalid(format!(
            "curve {source:?} is neither a preset nor an existing file"
        )));
    }
    let text = fs::read_to_string(source).with_context(|| format!("reading curve {source}"))?;
    serde_json::from_str(&text).map_err(|e| Failure::Invalid(format!("{source}: {e}")))
}

pub fn run(
    config: &Fig5Config,
    out: &Path,
    solver: &SolverConfig,
    verify: &VerifyConfig,
) -> Outcome {
    let curve = load_curve(&config.curve)?;
    let rates = RevenueDistribution::Uniform {
        low: config.low,
        high: config.high,
        seed: config.seed,
    }
    .sample(config.n, 1)
    .map_err(|e| Failure::Invalid(e.to_string()))?;
    let scenario = Scenario::constant_rate(rates, PricingScheme::IncreasingBlock, curve);
    let report = scenario.validate();
    if !report.is_valid() {
        return Err(Failure::Invalid(format!(
            "fig5 scenario rejected\n{report}"
        )));
    }
    let result = solvers::solve_block_constant_revenue(&scenario, solver)
        .map_err(|e| Failure::Other(anyhow::anyhow!(e)))?;
    let cert = solvers::verify_nep_with(&scenario, &result.profile, verify);

    let mut order: Vec<usize> = (0..scenario.num_consumers).collect();
    order.sort_by(|&a, &b| {
        scenario.revenue_rates[a][0]
            .total_cmp(&scenario.revenue_rates[b][0])
            .then(a.cmp(&b))
    });
    let rows: Vec<Vec<String>> = order
        .iter()
        .map(|&i| {
            vec![
                i.to_string(),
                num(scenario.revenue_rates[i][0]),
                num(result.profile.get(i, 0)),
                num(result.prices.at(i, 0)),
                num(cert.condition_residuals[i][0]),
            ]
        })
        .collect();
    report::write_csv(
        out,
        "fig5.csv",
        &[
            "consumer",
            "revenue_rate",
            "demand",
            "marginal_price",
            "residual",
        ],
        &rows,
    )?;
    let scenario_text = serde_json::to_string(&scenario).map_err(anyhow::Error::from)?;
    let meta = Metadata::new("fig5", &scenario_text, Some(config.seed), *solver, *verify);
    let mut summary = report::certificate_json(&cert);
    summary["converged"] = serde_json::json!(result.converged);
    report::write_json(out, "certificate.json", &summary)?;
    report::write_json(out, "metadata.json", &meta)?;

    let buyers = (0..scenario.num_consumers)
        .filter(|&i| result.profile.get(i, 0) > 0.0)
        .count();
    println!(
        "{} of {} consumers buy; participation threshold {} $/MWh; max residual {:.3e}; verified={}",
        buyers,
        scenario.num_consumers,
        scenario.cost_curve.base_rate(),
        cert.max_residual,
        cert.verified
    );
    if result.converged && cert.verified {
        Ok(())
    } else {
        Err(Failure::Unverified(
            "fig5 equilibrium not certified; output is partial".to_string(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_source_is_preset_or_file() {
        assert!(load_curve("merit-order").is_ok());
        assert!(matches!(
            load_curve("no-such-curve"),
            Err(Failure::Invalid(_))
        ));
        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().join("c.json");
        fs::write(
            &path,
            r#"{"breakpoints": [{"quantity": 0.0, "marginal_rate": 40.0}], "capacity": 5.0}"#,
        )
        .unwrap();
        let curve = load_curve(path.to_str().unwrap()).ok().unwrap();
        assert_eq!(curve.base_rate(), 40.0);
    }
}
