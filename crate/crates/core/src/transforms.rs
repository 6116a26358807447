//! Outcome-preserving maps between mechanisms.
//!
//! Each map rewrites the buyers' bidding functions (and the parameter tuple)
//! so that the target mechanism reproduces every buyer's expected payment and
//! utility and the seller's revenue. Every result carries a certification
//! block comparing both sides by independent evaluation.

use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::{Evaluator, OutcomeProfile};
use crate::mechanisms::{Buyer, MechanismKind, MechanismSpec, Scenario};
use crate::qfspace::QuantileFunction;
use crate::roots::bisect_predicate;
use crate::solvers::{self, complementarity_residual, SolverOptions};

/// Largest accepted discrepancy between the two sides of a map.
pub const MAP_TOL: f64 = 1e-4;

const MONOTONE_GRID: usize = 1001;
const JUMP_TOL: f64 = 1e-9;

/// Inverse of the virtual transform: `s(x) = (integral of r over [x, 1]) / (1 - x)`.
pub fn devirtualize(r: &QuantileFunction) -> Result<QuantileFunction> {
    r.validate()?;
    let top = r.at(1.0);
    if top <= 0.0 {
        return Err(Error::PreconditionViolation(format!(
            "function must be positive at quantile 1, got {top}"
        )));
    }
    let mass = r.integral(0.0, 1.0);
    if mass < -1e-12 {
        return Err(Error::PreconditionViolation(format!(
            "function must have a non-negative integral, got {mass}"
        )));
    }
    Ok(QuantileFunction::integral_average_of(r.clone()))
}

/// Replaces the part of an increasing function below `lambda / 2` by a
/// positive head that joins it with matching value and slope.
///
/// Returns the input unchanged when it is already non-negative.
pub fn lift(psi: &QuantileFunction, lambda: f64) -> Result<QuantileFunction> {
    let top = psi.at(1.0);
    if top < lambda {
        return Err(Error::PreconditionViolation(format!(
            "function peaks at {top} below the reserve {lambda}; the buyer can never win"
        )));
    }
    if !is_strictly_increasing(psi) {
        return Err(Error::PreconditionViolation(
            "function to lift must be strictly increasing".into(),
        ));
    }
    if psi.at(0.0) >= 0.0 {
        return Ok(psi.clone());
    }
    let half = 0.5 * lambda;
    let (below, q0) = bisect_predicate(0.0, 1.0, 0.0, |q| psi.at(q) < half);
    let lifted = if psi.at(q0) - psi.at(below) > JUMP_TOL {
        // psi jumps across lambda / 2; the head stops at lambda / 2 with the
        // slope psi has on the left.
        exp_head(psi, q0, half, psi.slope(below))
    } else {
        with_positive_head(psi, q0)
    };
    lifted.validate()?;
    Ok(lifted)
}

/// `psi` from `q0` on, preceded by an exponential head (or, when `psi` is
/// flat at `q0`, a quarter sine wave) matching its value and slope at `q0`.
fn with_positive_head(psi: &QuantileFunction, q0: f64) -> QuantileFunction {
    let join_value = psi.at(q0);
    let slope = psi.slope(q0);
    if slope > 0.0 {
        exp_head(psi, q0, join_value, slope)
    } else {
        QuantileFunction::SineHead {
            level: 0.5 * join_value,
            rate: FRAC_PI_4 / q0,
            join: q0,
            tail: Box::new(psi.clone()),
        }
    }
}

fn exp_head(psi: &QuantileFunction, q0: f64, level: f64, slope: f64) -> QuantileFunction {
    QuantileFunction::ExpHead {
        level,
        rate: slope.max(0.0) / level,
        join: q0,
        tail: Box::new(psi.clone()),
    }
}

fn is_strictly_increasing(f: &QuantileFunction) -> bool {
    let n = MONOTONE_GRID - 1;
    let mut prev = f.at(0.0);
    (1..=n).all(|k| {
        let v = f.at(k as f64 / n as f64);
        let up = v > prev;
        prev = v;
        up
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappedSide {
    pub mechanism: MechanismKind,
    pub params: Vec<f64>,
    pub bidding_qfs: Vec<QuantileFunction>,
    pub profile: OutcomeProfile,
    /// Largest complementarity residual of `params` on this side.
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certification {
    pub discrepancy: f64,
    pub tolerance: f64,
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappedProfile {
    pub source: MappedSide,
    pub target: MappedSide,
    pub certification: Certification,
    /// Parameters the target's own solver finds on the mapped profile, when
    /// it differs from the construction tuple only by solver choice.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_solver_params: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl MappedProfile {
    pub fn require_certified(&self) -> Result<()> {
        if self.certification.certified {
            Ok(())
        } else {
            Err(Error::CertificationFailed {
                discrepancy: self.certification.discrepancy,
                tolerance: self.certification.tolerance,
            })
        }
    }
}

fn side(
    kind: MechanismKind,
    scenario: &Scenario,
    params: Vec<f64>,
    opts: &SolverOptions,
) -> Result<MappedSide> {
    let profile = Evaluator::new(&MechanismSpec::new(kind, params.clone()), scenario, opts.quad)?
        .profile_unchecked();
    let max_residual = params
        .iter()
        .zip(&profile.buyers)
        .zip(&scenario.buyers)
        .map(|((&t, b), buyer)| complementarity_residual(t, b.payment, buyer.budget))
        .fold(0.0, f64::max);
    Ok(MappedSide {
        mechanism: kind,
        params,
        bidding_qfs: scenario.buyers.iter().map(|b| b.qf.clone()).collect(),
        profile,
        max_residual,
    })
}

fn certify(source: MappedSide, target: MappedSide) -> MappedProfile {
    let discrepancy = source.profile.max_discrepancy(&target.profile);
    MappedProfile {
        source,
        target,
        certification: Certification {
            discrepancy,
            tolerance: MAP_TOL,
            certified: discrepancy <= MAP_TOL,
        },
        target_solver_params: None,
        notes: Vec::new(),
    }
}

/// BROA on `scenario` to BDFPA on the lifted virtual bidding functions, with
/// the bid-discount tuple equal to BROA's optimal boost tuple.
pub fn map_broa_to_ebdfpa(scenario: &Scenario, opts: &SolverOptions) -> Result<MappedProfile> {
    let lambda = scenario.lambda;
    let mut notes = Vec::new();
    let mut targets = Vec::with_capacity(scenario.n());
    for (i, b) in scenario.buyers.iter().enumerate() {
        let psi = QuantileFunction::virtual_of(b.qf.clone());
        if !is_strictly_increasing(&psi) {
            return Err(Error::PreconditionViolation(format!(
                "buyer {i}: virtual bid function is not strictly increasing"
            )));
        }
        if psi.at(1.0) < lambda {
            notes.push(format!(
                "buyer {i}: virtual bids never reach the reserve; the buyer is out of contention on both sides"
            ));
            targets.push(QuantileFunction::Affine {
                base: Box::new(psi),
                scale: 1.0,
                shift: 0.0,
            });
        } else {
            targets.push(lift(&psi, lambda)?);
        }
    }
    let broa = solvers::solve_dual(MechanismKind::Broa, scenario, opts)?;
    let target_scenario = scenario.with_bidding_qfs(targets)?;
    target_scenario.validate()?;
    let source = side(MechanismKind::Broa, scenario, broa.params.clone(), opts)?;
    let target = side(MechanismKind::Bdfpa, &target_scenario, broa.params, opts)?;
    let mut mapped = certify(source, target);
    mapped.notes = notes;
    Ok(mapped)
}

/// BDFPA on `scenario` (at its maximum budget-extracting tuple) to BROA on
/// the devirtualized bidding functions with the same tuple as boosts.
pub fn map_ebdfpa_to_broa(scenario: &Scenario, opts: &SolverOptions) -> Result<MappedProfile> {
    let mut targets = Vec::with_capacity(scenario.n());
    for (i, b) in scenario.buyers.iter().enumerate() {
        if !is_strictly_increasing(&b.qf) {
            return Err(Error::PreconditionViolation(format!(
                "buyer {i}: bid function is not strictly increasing"
            )));
        }
        targets.push(devirtualize(&b.qf)?);
    }
    let bdfpa = solvers::solve_max_tuple(MechanismKind::Bdfpa, scenario, opts)?;
    let target_scenario = scenario.with_bidding_qfs(targets)?;
    target_scenario.validate()?;
    let source = side(MechanismKind::Bdfpa, scenario, bdfpa.params.clone(), opts)?;
    let target = side(MechanismKind::Broa, &target_scenario, bdfpa.params, opts)?;
    Ok(certify(source, target))
}

fn require_first_or_second_price(kind: MechanismKind) -> Result<()> {
    if kind == MechanismKind::Broa {
        Err(Error::InvalidSpec(
            "symmetric maps cover bdfpa, pfpa, bdspa and pspa; use the broa maps instead".into(),
        ))
    } else {
        Ok(())
    }
}

fn solve_symmetric_multiplier(kind: MechanismKind, scenario: &Scenario, opts: &SolverOptions) -> Result<f64> {
    Ok(solvers::solve_symmetric(kind, scenario, opts)?.params[0])
}

/// Range of common multipliers under which `kind` can charge `payment` with a
/// strictly increasing bid function that crosses the reserve at `q0`
/// (open interval, clipped to `(lambda, 1]`).
fn feasible_multipliers(kind: MechanismKind, n: usize, lambda: f64, q0: f64, payment: f64) -> (f64, f64) {
    let nf = n as f64;
    let mass = (1.0 - q0.powi(n as i32)) / nf;
    let edge = q0.powi(n as i32 - 1) * (1.0 - q0);
    // Largest payment of the second-price variants with bids jumping to 1
    // right after the reserve crossing.
    let spa_top = |m: f64| mass - (1.0 - lambda / m) * edge;
    let (lo, hi) = match kind {
        MechanismKind::Bdfpa => (lambda * mass / payment, 1.0),
        MechanismKind::Pfpa => (payment / mass, 1.0),
        MechanismKind::Bdspa => {
            let lo = lambda * mass / payment;
            let hi = if spa_top(1.0) > payment {
                1.0
            } else {
                let (a, _) = bisect_predicate(lambda, 1.0, 1e-14, |m| spa_top(m) > payment);
                a
            };
            (lo, hi)
        }
        MechanismKind::Pspa => {
            let lo = if lambda * mass >= payment {
                f64::INFINITY
            } else {
                let (_, b) = bisect_predicate(lambda, 1.0, 1e-14, |m| m * spa_top(m) <= payment);
                b
            };
            (lo, 1.0)
        }
        MechanismKind::Broa => (f64::INFINITY, f64::NEG_INFINITY),
    };
    (lo.max(lambda), hi.min(1.0))
}

/// Supremum of the per-buyer payment `kind` can reach at multiplier 1 with a
/// bid function crossing the reserve at `q0`.
fn payment_cap(kind: MechanismKind, n: usize, lambda: f64, q0: f64) -> f64 {
    let mass = (1.0 - q0.powi(n as i32)) / n as f64;
    let edge = q0.powi(n as i32 - 1) * (1.0 - q0);
    match kind {
        MechanismKind::Bdfpa | MechanismKind::Pfpa => mass,
        MechanismKind::Bdspa | MechanismKind::Pspa => mass - (1.0 - lambda) * edge,
        MechanismKind::Broa => 0.0,
    }
}

/// Slope of the last piece of a knee-shaped target bid function.
const KNEE_SLOPE: f64 = 1e-3;

/// Symmetric target bid function: a saturating tail from the reserve level
/// `c` at `q0`, with an exponential head below `q0` matching slope.
fn symmetric_target_qf(c: f64, q0: f64, scale: f64, rate: f64) -> QuantileFunction {
    with_level_head(
        c,
        q0,
        QuantileFunction::SaturatingTail {
            offset: c,
            scale,
            rate,
            join: q0,
        },
    )
}

/// Target bid function rising linearly from `c` at `q0` to a knee at
/// `q0 + (1 - x)(1 - q0)`, then climbing to 1 with slope `KNEE_SLOPE`.
/// `x = 0` is the straight line to 1; `x -> 1` approaches a step.
fn knee_target_qf(c: f64, q0: f64, x: f64) -> QuantileFunction {
    let knee = q0 + (1.0 - x) * (1.0 - q0);
    let mut grid = vec![0.0];
    let mut values = vec![c];
    if q0 > 0.0 {
        grid.push(q0);
        values.push(c);
    }
    if knee < 1.0 {
        grid.push(knee);
        values.push(1.0 - KNEE_SLOPE * (1.0 - knee));
    }
    grid.push(1.0);
    values.push(1.0);
    with_level_head(c, q0, QuantileFunction::PiecewiseLinear { grid, values })
}

fn with_level_head(c: f64, q0: f64, tail: QuantileFunction) -> QuantileFunction {
    if q0 <= 0.0 {
        return tail;
    }
    let slope = tail.slope(q0);
    QuantileFunction::ExpHead {
        level: c,
        rate: slope / c,
        join: q0,
        tail: Box::new(tail),
    }
}

/// Symmetric map between any two of BDFPA, PFPA, BDSPA and PSPA at their
/// budget-extracting multipliers.
pub fn map_symmetric(
    from: MechanismKind,
    to: MechanismKind,
    scenario: &Scenario,
    opts: &SolverOptions,
) -> Result<MappedProfile> {
    require_first_or_second_price(from)?;
    require_first_or_second_price(to)?;
    scenario.require_symmetric()?;
    let n = scenario.n();
    let lambda = scenario.lambda;
    let bid = &scenario.buyers[0].qf;
    if bid.inverse_lipschitz_lower(MONOTONE_GRID) <= 0.0 {
        return Err(Error::PreconditionViolation(
            "common bid function must be strictly increasing".into(),
        ));
    }
    let m_s = solve_symmetric_multiplier(from, scenario, opts)?;
    let source = side(from, scenario, vec![m_s; n], opts)?;
    let payment = source.profile.buyers[0].payment;
    let mut notes = Vec::new();

    let never_sells = m_s * bid.at(1.0) <= lambda;
    let same_family = from.is_second_price() == to.is_second_price();
    if never_sells || (same_family && m_s >= 1.0) || from == to {
        notes.push(if never_sells {
            "no buyer ever clears the reserve; both sides are all-zero".to_string()
        } else {
            "multiplier at its cap; the target keeps the source bid function".to_string()
        });
        let m_t = if from == to { m_s } else { 1.0 };
        let target = side(to, scenario, vec![m_t; n], opts)?;
        let mut mapped = certify(source, target);
        mapped.notes = notes;
        return Ok(mapped);
    }

    let q0 = bid.cdf(lambda / m_s);
    let m_t = if m_s >= 1.0 {
        1.0
    } else {
        let (lo, hi) = feasible_multipliers(to, n, lambda, q0, payment);
        if m_s > lo + 1e-9 && m_s < hi - 1e-9 {
            m_s
        } else {
            0.5 * (lo + hi)
        }
    };
    let (lo, hi) = feasible_multipliers(to, n, lambda, q0, payment);
    if !(m_t > lo && m_t <= hi) || lo >= hi {
        let cap = payment_cap(to, n, lambda, q0);
        return Err(Error::RootBracketFailure {
            what: format!("{to} multiplier reproducing payment {payment:.6e} (largest reachable payment shown at both ends)"),
            lo,
            hi,
            f_lo: cap,
            f_hi: cap,
            target: payment,
        });
    }
    notes.push(format!(
        "reserve crossing at quantile {q0:.9}; source multiplier {m_s:.9}, target multiplier {m_t:.9}"
    ));

    let c = lambda / m_t;
    let budget = scenario.buyers[0].budget;
    let values = scenario.buyers[0].value_qf().clone();
    let target_scenario_for = |qf: QuantileFunction| Scenario {
        lambda,
        buyers: vec![
            Buyer {
                qf,
                budget,
                value_qf: Some(values.clone()),
            };
            n
        ],
    };
    let pay = |qf: QuantileFunction| -> Result<f64> {
        let s = target_scenario_for(qf);
        Ok(Evaluator::new(&MechanismSpec::new(to, vec![m_t; n]), &s, opts.quad)?
            .buyer(0)
            .payment)
    };

    let span = 1.0 - q0;
    let full_linear = pay(symmetric_target_qf(c, q0, 1.0 - c, 0.0))?;
    let qf = if payment <= full_linear {
        // Linear tail: slope k in [0, (1 - c) / (1 - q0)].
        let flat = pay(symmetric_target_qf(c, q0, 0.0, 0.0))?;
        if payment < flat {
            return Err(Error::RootBracketFailure {
                what: "linear tail slope".into(),
                lo: 0.0,
                hi: (1.0 - c) / span,
                f_lo: flat,
                f_hi: full_linear,
                target: payment,
            });
        }
        let (a, b) = bisect_predicate(0.0, 1.0 - c, 1e-12, |scale| {
            pay(symmetric_target_qf(c, q0, scale, 0.0)).map_or(false, |p| p < payment)
        });
        notes.push(format!("linear tail, slope {:.9}", 0.5 * (a + b) / span));
        symmetric_target_qf(c, q0, 0.5 * (a + b), 0.0)
    } else {
        // Knee tail: sweeps from the straight line towards a step at q0.
        let steep = 1.0 - 1e-9;
        let p_steep = pay(knee_target_qf(c, q0, steep))?;
        if p_steep < payment {
            return Err(Error::RootBracketFailure {
                what: "knee position of the target bid function".into(),
                lo: 0.0,
                hi: steep,
                f_lo: full_linear,
                f_hi: p_steep,
                target: payment,
            });
        }
        let (a, b) = bisect_predicate(0.0, steep, 1e-12, |x| {
            pay(knee_target_qf(c, q0, x)).map_or(false, |p| p < payment)
        });
        let x = 0.5 * (a + b);
        notes.push(format!("knee tail at quantile {:.9}", q0 + (1.0 - x) * span));
        knee_target_qf(c, q0, x)
    };

    let target_scenario = target_scenario_for(qf);
    target_scenario.validate()?;
    let target = side(to, &target_scenario, vec![m_t; n], opts)?;
    let solved = solve_symmetric_multiplier(to, &target_scenario, opts).ok();
    let mut mapped = certify(source, target);
    if let Some(m) = solved {
        if (m - m_t).abs() > 1e-6 {
            notes.push(format!(
                "the target solver lands on a different budget-extracting multiplier {m:.9}"
            ));
        }
        mapped.target_solver_params = Some(vec![m; n]);
    }
    mapped.notes = notes;
    Ok(mapped)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn devirtualize_linear_virtual_gives_identity() {
        let r = QuantileFunction::Uniform { lo: -1.0, hi: 1.0 };
        let s = devirtualize(&r).unwrap();
        for k in 0..=100 {
            let q = k as f64 / 100.0;
            assert!((s.at(q) - q).abs() < 1e-14, "{q}");
        }
    }

    #[test]
    fn devirtualize_identity_gives_midpoint() {
        let s = devirtualize(&QuantileFunction::identity()).unwrap();
        let psi = s.virtualize();
        for k in 0..=100 {
            let q = k as f64 / 100.0;
            assert!((s.at(q) - 0.5 * (1.0 + q)).abs() < 1e-14);
            assert!((psi.at(q) - q).abs() < 1e-9);
        }
    }

    #[test]
    fn devirtualize_constant() {
        let s = devirtualize(&QuantileFunction::Uniform { lo: 0.3, hi: 0.3 }).unwrap();
        assert!((s.at(0.2) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn devirtualize_preconditions() {
        assert!(matches!(
            devirtualize(&QuantileFunction::Uniform { lo: -1.0, hi: 0.5 }),
            Err(Error::PreconditionViolation(_))
        ));
        assert!(matches!(
            devirtualize(&QuantileFunction::Uniform { lo: -0.5, hi: 0.0 }),
            Err(Error::PreconditionViolation(_))
        ));
    }

    #[test]
    fn lift_of_uniform_virtual() {
        let psi = QuantileFunction::virtual_of(QuantileFunction::identity());
        let lifted = lift(&psi, 0.1).unwrap();
        match &lifted {
            QuantileFunction::ExpHead {
                level, rate, join, ..
            } => {
                assert!((join - 0.525).abs() < 1e-12);
                assert!((rate - 40.0).abs() < 1e-9);
                let a1 = level * (-rate * join).exp();
                assert!((a1 - 0.05 * (-21.0f64).exp()).abs() < 1e-18);
                // Slope of the head is a1 a2 exp(a2 q).
                let q = 0.3;
                assert!((lifted.slope(q) - a1 * rate * (rate * q).exp()).abs() < 1e-15);
            }
            other => panic!("unexpected {other:?}"),
        }
        for k in 0..=1000 {
            let q = k as f64 / 1000.0;
            assert!(lifted.at(q) > 0.0);
            if psi.at(q) >= 0.05 {
                assert_eq!(lifted.at(q), psi.at(q));
            }
        }
    }

    #[test]
    fn lift_is_identity_on_nonnegative_input() {
        let psi = QuantileFunction::Uniform { lo: 0.0, hi: 0.8 };
        assert_eq!(lift(&psi, 0.1).unwrap(), psi);
    }

    #[test]
    fn lift_rejects_hopeless_buyers() {
        let psi = QuantileFunction::Uniform { lo: -0.5, hi: 0.05 };
        assert!(matches!(lift(&psi, 0.1), Err(Error::PreconditionViolation(_))));
    }

    #[test]
    fn flat_join_gets_sine_head() {
        let psi = QuantileFunction::piecewise_linear(
            vec![0.0, 0.4, 0.6, 1.0],
            vec![0.0, 0.05, 0.05, 0.6],
        )
        .unwrap();
        let lifted = with_positive_head(&psi, 0.4);
        assert!(matches!(lifted, QuantileFunction::SineHead { .. }));
        lifted.validate().unwrap();
        assert!(lifted.at(0.0) > 0.0);
        assert!((lifted.at(0.4) - 0.05).abs() < 1e-15);
    }
}
