//! Report files: CSV tables with full double precision and JSON sidecars.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use loadgame::scenario::{DemandProfile, Scenario};
use loadgame::solvers::{
    EquilibriumResult, NepCertificate, SolverConfig, SolverKind, VerifyConfig,
};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// 17 significant digits, enough to round-trip any `f64`.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

pub fn solver_name(kind: SolverKind) -> &'static str {
    match kind {
        SolverKind::ZeroRevenueClosedForm => "zero-revenue closed-form",
        SolverKind::AverageConstantRate => "average-cost constant-rate",
        SolverKind::BlockConstantRate => "increasing-block constant-rate",
        SolverKind::Iterative => "iterative",
    }
}

#[derive(Debug, Serialize)]
pub struct Metadata {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub scenario_sha256: String,
    pub seed: Option<u64>,
    pub solver: SolverConfig,
    pub verify: VerifyConfig,
}

impl Metadata {
    pub fn new(
        command: &'static str,
        scenario_text: &str,
        seed: Option<u64>,
        solver: SolverConfig,
        verify: VerifyConfig,
    ) -> Self {
        Self {
            tool: "loadgame",
            version: env!("CARGO_PKG_VERSION"),
            command,
            scenario_sha256: hex::encode(Sha256::digest(scenario_text.as_bytes())),
            seed,
            solver,
            verify,
        }
    }
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_csv(dir: &Path, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let mut w =
        csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Certificate as JSON. Infinities are not valid JSON numbers, so they are
/// written as strings.
pub fn certificate_json(cert: &NepCertificate) -> serde_json::Value {
    let f = |v: f64| {
        if v.is_finite() {
            serde_json::json!(v)
        } else {
            serde_json::json!(v.to_string())
        }
    };
    serde_json::json!({
        "verified": cert.verified,
        "max_residual": f(cert.max_residual),
        "deviation_gain": f(cert.deviation_gain),
        "payoff_scale": f(cert.payoff_scale),
        "grid_step": cert.grid_step,
        "residual_tol": cert.residual_tol,
        "gain_tol": cert.gain_tol,
        "consumer_gains": cert.consumer_gains.iter().map(|&v| f(v)).collect::<Vec<_>>(),
        "condition_residuals": cert
            .condition_residuals
            .iter()
            .map(|row| row.iter().map(|&v| f(v)).collect::<Vec<_>>())
            .collect::<Vec<_>>(),
    })
}

pub fn write_solution(
    dir: &Path,
    scenario: &Scenario,
    result: &EquilibriumResult,
    cert: &NepCertificate,
    meta: &Metadata,
) -> Result<()> {
    let (n, t_count) = (scenario.num_consumers, scenario.num_slots);
    let b = &result.breakdown;
    let mut demand = Vec::new();
    let mut prices = Vec::new();
    let mut payments = Vec::new();
    for i in 0..n {
        for t in 0..t_count {
            let key = vec![i.to_string(), t.to_string()];
            demand.push([key.clone(), vec![num(result.profile.get(i, t))]].concat());
            prices.push([key.clone(), vec![num(result.prices.at(i, t))]].concat());
            payments.push([key, vec![num(b.revenue[i][t]), num(b.payment[i][t])]].concat());
        }
    }
    let payoffs: Vec<Vec<String>> = (0..n)
        .map(|i| {
            vec![
                i.to_string(),
                num(b.revenue[i].iter().sum()),
                num(b.payment[i].iter().sum()),
                num(b.payoff[i]),
            ]
        })
        .collect();
    let trace: Vec<Vec<String>> = result
        .trace
        .iter()
        .enumerate()
        .map(|(k, &u)| vec![(k + 1).to_string(), num(u)])
        .collect();
    write_csv(dir, "demand.csv", &["consumer", "slot", "demand"], &demand)?;
    write_csv(dir, "prices.csv", &["consumer", "slot", "price"], &prices)?;
    write_csv(
        dir,
        "payments.csv",
        &["consumer", "slot", "revenue", "payment"],
        &payments,
    )?;
    write_csv(
        dir,
        "payoffs.csv",
        &["consumer", "revenue", "payment", "payoff"],
        &payoffs,
    )?;
    write_csv(dir, "trace.csv", &["sweep", "max_update"], &trace)?;
    let mut summary = certificate_json(cert);
    summary["solver"] = serde_json::json!(solver_name(result.solver));
    summary["converged"] = serde_json::json!(result.converged);
    summary["iterations"] = serde_json::json!(result.iterations);
    summary["max_update"] = if result.max_update.is_finite() {
        serde_json::json!(result.max_update)
    } else {
        serde_json::json!(result.max_update.to_string())
    };
    summary["uniqueness"] = serde_json::to_value(result.uniqueness)?;
    write_json(dir, "certificate.json", &summary)?;
    write_json(dir, "metadata.json", meta)
}

/// Reads a `consumer,slot,demand` CSV; every cell of the matrix must be set
/// exactly once.
pub fn read_profile(path: &Path, scenario: &Scenario) -> Result<DemandProfile> {
    let (n, t_count) = (scenario.num_consumers, scenario.num_slots);
    let mut cells = vec![vec![None; t_count]; n];
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != 3 {
            bail!("row {}: expected consumer,slot,demand", line + 1);
        }
        let i: usize = record[0].trim().parse().context("consumer index")?;
        let t: usize = record[1].trim().parse().context("slot index")?;
        let x: f64 = record[2].trim().parse().context("demand value")?;
        if i >= n || t >= t_count {
            bail!("row {}: cell ({i}, {t}) outside {n} x {t_count}", line + 1);
        }
        if cells[i][t].replace(x).is_some() {
            bail!("row {}: cell ({i}, {t}) given twice", line + 1);
        }
    }
    let mut rows = Vec::with_capacity(n);
    for (i, row) in cells.into_iter().enumerate() {
        let row: Option<Vec<f64>> = row.into_iter().collect();
        match row {
            Some(r) => rows.push(r),
            None => bail!("consumer {i} is missing slots"),
        }
    }
    Ok(DemandProfile::new(rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use loadgame::{CostCurve, PricingScheme};

    #[test]
    fn numbers_round_trip() {
        for v in [0.0, 1.0 / 3.0, 1e-300, 6.02e23, -2.5] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(num(f64::INFINITY), "inf");
    }

    #[test]
    fn profile_reader_rejects_gaps_and_repeats() {
        let dir = tempfile::TempDir::new().unwrap();
        let s = Scenario::zero_revenue(
            vec![1.0, 1.0],
            1,
            PricingScheme::AverageCost,
            CostCurve::flat(1.0, 10.0).unwrap(),
        );
        let path = dir.path().join("p.csv");
        fs::write(&path, "consumer,slot,demand\n0,0,1\n1,0,1\n").unwrap();
        assert_eq!(read_profile(&path, &s).unwrap().slot_sums(), vec![2.0]);
        fs::write(&path, "consumer,slot,demand\n0,0,1\n0,0,1\n").unwrap();
        assert!(read_profile(&path, &s).is_err());
        fs::write(&path, "consumer,slot,demand\n0,0,1\n").unwrap();
        assert!(read_profile(&path, &s).is_err());
        fs::write(&path, "consumer,slot,demand\n0,3,1\n").unwrap();
        assert!(read_profile(&path, &s).is_err());
    }
}
