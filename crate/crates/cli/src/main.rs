//! `loadgame` command-line driver.
//!
//! Exit codes: 0 success, 1 I/O or internal error, 2 invalid scenario,
//! 3 equilibrium not converged or not verified.

mod fig5;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use loadgame::flow_checks::{self, ProbeConfig};
use loadgame::scenario::{Scenario, ScenarioFile};
use loadgame::solvers::{self, SolverChoice, SolverConfig, VerifyConfig};

#[derive(Parser)]
#[command(
    name = "loadgame",
    version,
    about = "Consumer load-balancing equilibria under real-time pricing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario and write the equilibrium report.
    Solve {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SolverArg::Auto)]
        solver: SolverArg,
        #[command(flatten)]
        tolerances: Tolerances,
    },
    /// Increasing-block participation sweep: one slot, revenue rates drawn
    /// uniformly, one CSV row per consumer sorted by rate.
    #[command(name = "fig5")]
    Fig5 {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Preset name or path to a cost-curve JSON file.
        #[arg(long, default_value = "merit-order")]
        curve: String,
        #[arg(long, default_value_t = 0.0)]
        low: f64,
        #[arg(long, default_value_t = 100.0)]
        high: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        tolerances: Tolerances,
    },
    /// Sample the link-cost assumptions for a scenario.
    CheckAssumptions {
        scenario: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write assumptions.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certify a demand profile (CSV with consumer,slot,demand rows).
    Verify {
        scenario: PathBuf,
        profile: PathBuf,
        #[command(flatten)]
        tolerances: Tolerances,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Auto,
    ClosedForm,
    Iterative,
}

impl From<SolverArg> for SolverChoice {
    fn from(a: SolverArg) -> Self {
        match a {
            SolverArg::Auto => SolverChoice::Auto,
            SolverArg::ClosedForm => SolverChoice::ClosedForm,
            SolverArg::Iterative => SolverChoice::Iterative,
        }
    }
}

#[derive(Args, Clone, Copy)]
struct Tolerances {
    /// Sup-norm update below which iteration stops [MWh].
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 0.5)]
    damping: f64,
    #[arg(long, default_value_t = 100_000)]
    max_iterations: usize,
    /// Relative first-order residual bound.
    #[arg(long, default_value_t = 1e-6)]
    residual_tol: f64,
    /// Deviation grid spacing of the verifier.
    #[arg(long, default_value_t = 1e-3)]
    grid_step: f64,
    /// Accepted deviation gain relative to the payoff scale.
    #[arg(long, default_value_t = 1e-6)]
    gain_tol: f64,
}

impl Tolerances {
    fn solver(&self) -> SolverConfig {
        SolverConfig {
            damping: self.damping,
            tol: self.tol,
            max_iterations: self.max_iterations,
            residual_tol: self.residual_tol,
        }
    }

    fn verify(&self) -> VerifyConfig {
        VerifyConfig {
            grid_step: self.grid_step,
            residual_tol: self.residual_tol,
            gain_tol: self.gain_tol,
        }
    }
}

/// Outcome that maps onto an exit code.
enum Failure {
    Invalid(String),
    Unverified(String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Solve {
            scenario,
            out,
            solver,
            tolerances,
        } => run_solve(&scenario, &out, solver.into(), &tolerances),
        Command::Fig5 {
            n,
            seed,
            curve,
            low,
            high,
            out,
            tolerances,
        } => fig5::run(
            &fig5::Fig5Config {
                n,
                seed,
                curve,
                low,
                high,
            },
            &out,
            &tolerances.solver(),
            &tolerances.verify(),
        ),
        Command::CheckAssumptions {
            scenario,
            samples,
            seed,
            out,
        } => run_checks(&scenario, samples, seed, out.as_deref()),
        Command::Verify {
            scenario,
            profile,
            tolerances,
        } => run_verify(&scenario, &profile, &tolerances),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
        Err(Failure::Unverified(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(3)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Reads and parses a scenario file; returns its text for hashing.
fn load_scenario(path: &Path) -> Result<(Scenario, String), Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Other)?;
    let scenario = ScenarioFile::from_json(&text)
        .and_then(ScenarioFile::into_scenario)
        .map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
    Ok((scenario, text))
}

fn require_valid(scenario: &Scenario, path: &Path) -> Outcome {
    let report = scenario.validate();
    if report.is_valid() {
        Ok(())
    } else {
        Err(Failure::Invalid(format!(
            "{}: scenario rejected\n{report}",
            path.display()
        )))
    }
}

fn run_solve(path: &Path, out: &Path, choice: SolverChoice, tol: &Tolerances) -> Outcome {
    let (scenario, text) = load_scenario(path)?;
    require_valid(&scenario, path)?;
    let result = solvers::solve(&scenario, choice, &tol.solver())
        .map_err(|e| Failure::Other(anyhow::anyhow!(e)))?;
    let certificate = solvers::verify_nep_with(&scenario, &result.profile, &tol.verify());
    let meta = report::Metadata::new("solve", &text, None, tol.solver(), tol.verify());
    report::write_solution(out, &scenario, &result, &certificate, &meta)?;
    println!(
        "{} solver: {} sweeps, converged={}, max residual {:.3e}, deviation gain {:.3e}, verified={}",
        report::solver_name(result.solver),
        result.iterations,
        result.converged,
        certificate.max_residual,
        certificate.deviation_gain,
        certificate.verified
    );
    println!("report written to {}", out.display());
    if result.converged && certificate.verified {
        Ok(())
    } else {
        Err(Failure::Unverified(
            "equilibrium not certified; see certificate.json".to_string(),
        ))
    }
}

fn run_checks(path: &Path, samples: usize, seed: u64, out: Option<&Path>) -> Outcome {
    let (scenario, _) = load_scenario(path)?;
    let config = ProbeConfig { samples, seed };
    let g = flow_checks::check_g(&scenario, &config);
    let a = flow_checks::check_a(scenario.pricing_scheme, &scenario.cost_curve, &config);
    let semi = flow_checks::semi_convexity_check(&scenario.cost_curve, &config);
    for r in g.results.iter().chain(&a.results) {
        println!(
            "{:?}\t{}\t{}",
            r.assumption,
            if r.holds { "holds" } else { "fails" },
            r.note
        );
        if let Some(cx) = &r.counterexample {
            println!(
                "\tcounterexample: {}",
                serde_json::to_string(cx).map_err(anyhow::Error::from)?
            );
        }
    }
    println!(
        "semi-convexity\tsemi_convex={}\tstrict={}",
        semi.semi_convex, semi.strictly_semi_convex
    );
    if let Some(dir) = out {
        let doc = serde_json::json!({ "g": g, "a": a, "semi_convexity": semi });
        report::write_json(dir, "assumptions.json", &doc)?;
    }
    Ok(())
}

fn run_verify(path: &Path, profile_path: &Path, tol: &Tolerances) -> Outcome {
    let (scenario, _) = load_scenario(path)?;
    require_valid(&scenario, path)?;
    let profile = report::read_profile(profile_path, &scenario)
        .map_err(|e| Failure::Invalid(format!("{}: {e:#}", profile_path.display())))?;
    let certificate = solvers::verify_nep_with(&scenario, &profile, &tol.verify());
    println!(
        "{}",
        serde_json::to_string_pretty(&report::certificate_json(&certificate))
            .map_err(anyhow::Error::from)?
    );
    if certificate.verified {
        Ok(())
    } else {
        Err(Failure::Unverified(
            "profile is not a certified equilibrium".to_string(),
        ))
    }
}
