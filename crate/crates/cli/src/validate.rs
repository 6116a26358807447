//! The `validate` subcommand: independent checks of quadrature results.

use std::fmt::Write as _;

use auctionlab::example::default_method;
use auctionlab::oracle::{bcic_deviation_test, mc_outcome_profile, Deviation, DeviationGrid};
use auctionlab::solvers::{self, SolveMethod, SolverOptions};
use auctionlab::{Evaluator, MechanismKind, MechanismSpec, QuadratureConfig, Scenario};
use serde::Serialize;

use crate::{CmdResult, Failure, Format};

pub const FEASIBILITY_TOL: f64 = 1e-6;
pub const MAX_STANDARD_SCORE: f64 = 3.0;
pub const IR_TOL: f64 = 1e-12;
pub const BCIC_TOL: f64 = 1e-4;
pub const DOMINANCE_TOL: f64 = 1e-3;

#[derive(Serialize)]
struct Check {
    name: String,
    passed: bool,
    detail: String,
}

#[derive(Serialize)]
struct Report {
    samples: usize,
    seed: u64,
    checks: Vec<Check>,
    passed: bool,
}

struct Checks(Vec<Check>);

impl Checks {
    fn push(&mut self, name: impl Into<String>, passed: bool, detail: String) {
        self.0.push(Check {
            name: name.into(),
            passed,
            detail,
        });
    }
}

/// Budget feasibility, Monte Carlo agreement and ex-post rationality of one
/// parameter tuple.
fn check_spec(checks: &mut Checks, spec: &MechanismSpec, scenario: &Scenario, samples: usize, seed: u64) -> Result<(), Failure> {
    let kind = spec.kind;
    let profile = Evaluator::new(spec, scenario, QuadratureConfig::default())?.profile_unchecked();
    let overrun = profile
        .buyers
        .iter()
        .zip(&scenario.buyers)
        .map(|(o, b)| o.payment - b.budget)
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(
        format!("{kind} budget feasibility"),
        overrun <= FEASIBILITY_TOL,
        format!("largest payment minus budget {overrun:.3e} (limit {FEASIBILITY_TOL:.0e})"),
    );
    let mc = mc_outcome_profile(spec, scenario, samples, seed)?;
    let z = mc.max_standard_score(&profile);
    checks.push(
        format!("{kind} Monte Carlo agreement"),
        z <= MAX_STANDARD_SCORE,
        format!("largest standard score {z:.2} (limit {MAX_STANDARD_SCORE})"),
    );
    checks.push(
        format!("{kind} ex-post individual rationality"),
        mc.min_winner_utility >= -IR_TOL,
        format!("smallest winner utility {:.3e}", mc.min_winner_utility),
    );
    Ok(())
}

fn check_bcic(checks: &mut Checks, scenario: &Scenario, theta: &[f64]) -> Result<(), Failure> {
    let r = bcic_deviation_test(
        MechanismKind::Bdspa,
        scenario,
        theta,
        &DeviationGrid::default(),
        QuadratureConfig::default(),
    )?;
    let best = r
        .best()
        .map(|g| {
            let how = match g.deviation {
                Deviation::Scale { factor } => format!("bids scaled by {factor}"),
                Deviation::Shift { amount } => format!("bids shifted by {amount}"),
            };
            format!(" (buyer {}, {how})", g.buyer)
        })
        .unwrap_or_default();
    checks.push(
        "bdspa incentive compatibility",
        r.max_gain <= BCIC_TOL,
        format!("largest deviation gain {:.3e}{best} (limit {BCIC_TOL:.0e})", r.max_gain),
    );
    Ok(())
}

pub fn run(scenario: &Scenario, samples: usize, seed: u64, fixed: Option<MechanismSpec>, format: Format) -> CmdResult {
    let mut checks = Checks(Vec::new());
    match fixed {
        Some(spec) => {
            spec.validate_for(scenario)?;
            check_spec(&mut checks, &spec, scenario, samples, seed)?;
            if spec.kind == MechanismKind::Bdspa {
                check_bcic(&mut checks, scenario, &spec.params)?;
            }
        }
        None => {
            let symmetric = scenario.is_symmetric(1e-12);
            let opts = SolverOptions::default();
            let mut revenues = Vec::new();
            for kind in MechanismKind::ALL {
                let method = default_method(kind);
                if method == SolveMethod::Symmetric && !symmetric {
                    continue;
                }
                let report = solvers::solve(kind, method, scenario, &opts)?;
                check_spec(
                    &mut checks,
                    &MechanismSpec::new(kind, report.params.clone()),
                    scenario,
                    samples,
                    seed,
                )?;
                revenues.push((kind, report));
            }
            let theta = revenues
                .iter()
                .find(|(k, _)| *k == MechanismKind::Bdspa)
                .map(|(_, r)| r.params.clone())
                .unwrap_or_else(|| vec![1.0; scenario.n()]);
            check_bcic(&mut checks, scenario, &theta)?;
            let revenue = |k: MechanismKind| revenues.iter().find(|(kk, _)| *kk == k).map(|(_, r)| r.revenue);
            let mut order = vec![
                (MechanismKind::Bdfpa, MechanismKind::Broa),
                (MechanismKind::Bdfpa, MechanismKind::Pfpa),
            ];
            if symmetric {
                order.push((MechanismKind::Broa, MechanismKind::Bdspa));
                order.push((MechanismKind::Broa, MechanismKind::Pspa));
            }
            for (hi, lo) in order {
                if let (Some(a), Some(b)) = (revenue(hi), revenue(lo)) {
                    checks.push(
                        format!("revenue {hi} >= {lo}"),
                        a >= b - DOMINANCE_TOL,
                        format!("{a:.6} vs {b:.6}"),
                    );
                }
            }
        }
    }
    let passed = checks.0.iter().all(|c| c.passed);
    let report = Report {
        samples,
        seed,
        checks: checks.0,
        passed,
    };
    match format {
        Format::Json => println!("{}", crate::to_json(&report)?),
        Format::Csv => {
            println!("check,passed,detail");
            for c in &report.checks {
                println!("{},{},\"{}\"", c.name, c.passed, c.detail.replace('"', "'"));
            }
        }
        Format::Table => {
            let mut out = String::new();
            for c in &report.checks {
                let _ = writeln!(out, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            let _ = write!(out, "{samples} samples, seed {seed}");
            println!("{out}");
        }
    }
    if passed {
        Ok(())
    } else {
        let failed = report.checks.iter().filter(|c| !c.passed).count();
        Err(Failure::new(6, format!("{failed} check(s) failed")))
    }
}
