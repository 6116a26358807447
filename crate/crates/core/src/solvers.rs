//! Budget-extracting parameter tuples.
//!
//! * `solve_dual`: projected gradient descent on the convex dual of the
//!   first-price bid-discount program (and of the boosted-reserve program,
//!   which has the same shape with virtual bids).
//! * `solve_max_tuple`: Gauss–Seidel coordinate ascent from zero to the
//!   entrywise-largest budget-feasible tuple (BDFPA, PFPA).
//! * `solve_symmetric`: one-dimensional search for the largest common
//!   multiplier of a symmetric scenario. For second-price variants this is the
//!   only method; for first-price variants it finds the same tuple as the
//!   coordinate ascent, since the largest feasible tuple of a symmetric
//!   scenario is itself symmetric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::Evaluator;
use crate::mechanisms::{MechanismKind, MechanismSpec, Scenario};
use crate::qfspace::QuantileFunction;
use crate::quadrature::QuadratureConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    Dual,
    MaxTuple,
    Symmetric,
}

impl std::str::FromStr for SolveMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dual" => Ok(SolveMethod::Dual),
            "max-tuple" | "max_tuple" => Ok(SolveMethod::MaxTuple),
            "symmetric" => Ok(SolveMethod::Symmetric),
            other => Err(Error::InvalidSpec(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub quad: QuadratureConfig,
    /// Allowed budget overshoot.
    pub feas_tol: f64,
    /// Allowed complementarity residual for a converged solve.
    pub comp_tol: f64,
    /// Payments at or below this count as zero.
    pub pay_tol: f64,
    /// Projected-gradient stopping residual.
    pub residual_tol: f64,
    /// Coordinate-ascent stopping move size.
    pub sweep_tol: f64,
    /// Bisection width on a multiplier.
    pub bisect_tol: f64,
    pub max_iters: usize,
    pub trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            quad: QuadratureConfig::default(),
            feas_tol: 1e-6,
            comp_tol: 1e-5,
            pay_tol: 1e-8,
            residual_tol: 1e-6,
            sweep_tol: 1e-8,
            bisect_tol: 1e-12,
            max_iters: 10_000,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub params: Vec<f64>,
    pub objective: f64,
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessTuple {
    pub nu: f64,
    pub params: Vec<f64>,
    pub payments: Vec<f64>,
    pub max_payment_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum Uniqueness {
    Unique {
        separation_holds: bool,
        some_budget_slack: bool,
    },
    NonUnique {
        witness: WitnessTuple,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub mechanism: MechanismKind,
    pub method: SolveMethod,
    pub params: Vec<f64>,
    /// Dual variables `1 - params` for dual solves.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dual: Option<Vec<f64>>,
    pub budgets: Vec<f64>,
    pub payments: Vec<f64>,
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    pub revenue: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dual_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duality_gap: Option<f64>,
    /// Which buyers' budgets bind (payment within tolerance of the budget).
    pub budget_binding: Vec<bool>,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniqueness: Option<Uniqueness>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceEntry>>,
}

/// `max((p - rho)^+, min(1 - theta, (rho - p)^+))`: zero exactly when the
/// budget holds and either it binds or the multiplier sits at its cap.
pub fn complementarity_residual(theta: f64, payment: f64, budget: f64) -> f64 {
    let over = (payment - budget).max(0.0);
    let slack = (budget - payment).max(0.0);
    over.max((1.0 - theta).min(slack))
}

fn payments_at(kind: MechanismKind, scenario: &Scenario, theta: &[f64], quad: QuadratureConfig) -> Result<Vec<f64>> {
    Ok(Evaluator::new(&MechanismSpec::new(kind, theta.to_vec()), scenario, quad)?.payments())
}

fn payment_of(
    kind: MechanismKind,
    scenario: &Scenario,
    theta: &[f64],
    i: usize,
    quad: QuadratureConfig,
) -> Result<f64> {
    Ok(Evaluator::new(&MechanismSpec::new(kind, theta.to_vec()), scenario, quad)?
        .buyer(i)
        .payment)
}

fn residuals(theta: &[f64], payments: &[f64], budgets: &[f64]) -> (Vec<f64>, f64) {
    let r: Vec<f64> = theta
        .iter()
        .zip(payments)
        .zip(budgets)
        .map(|((&t, &p), &b)| complementarity_residual(t, p, b))
        .collect();
    let max = r.iter().copied().fold(0.0, f64::max);
    (r, max)
}

/// Builds the report fields shared by all solvers from a final tuple.
fn finish_report(
    kind: MechanismKind,
    method: SolveMethod,
    scenario: &Scenario,
    theta: Vec<f64>,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    let profile = Evaluator::new(&MechanismSpec::new(kind, theta.clone()), scenario, opts.quad)?
        .profile_unchecked();
    let payments = profile.payments();
    let budgets = scenario.budgets();
    let (residuals, max_residual) = residuals(&theta, &payments, &budgets);
    let budget_binding = payments
        .iter()
        .zip(&budgets)
        .map(|(p, b)| (p - b).abs() <= opts.comp_tol)
        .collect();
    Ok(SolveReport {
        mechanism: kind,
        method,
        params: theta,
        dual: None,
        budgets,
        payments,
        residuals,
        max_residual,
        revenue: profile.revenue,
        dual_value: None,
        duality_gap: None,
        budget_binding,
        iterations: 0,
        converged: false,
        uniqueness: None,
        diagnostics: Vec::new(),
        trace: None,
    })
}

fn dual_score_functions(kind: MechanismKind, scenario: &Scenario) -> Result<Vec<QuantileFunction>> {
    match kind {
        MechanismKind::Bdfpa | MechanismKind::Broa => Ok(scenario
            .buyers
            .iter()
            .map(|b| kind.score_function(&b.qf))
            .collect()),
        other => Err(Error::InvalidSpec(format!(
            "no dual program for {other}; use bdfpa or broa"
        ))),
    }
}

/// The dual objective `E[max_i ((1 - tau_i) h_i(q_i) - lambda)^+] + sum_i tau_i rho_i`,
/// with `h_i` the bid (BDFPA) or the virtual bid (BROA).
pub fn dual_value(
    kind: MechanismKind,
    scenario: &Scenario,
    tau: &[f64],
    quad: QuadratureConfig,
) -> Result<f64> {
    let h = dual_score_functions(kind, scenario)?;
    if tau.len() != scenario.n() {
        return Err(Error::InvalidSpec(format!(
            "{} dual variables for {} buyers",
            tau.len(),
            scenario.n()
        )));
    }
    if let Some(t) = tau.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::InvalidSpec(format!("dual variable {t} outside [0, 1]")));
    }
    Ok(dual_value_with(&h, scenario, tau, quad))
}

fn dual_value_with(h: &[QuantileFunction], scenario: &Scenario, tau: &[f64], quad: QuadratureConfig) -> f64 {
    let lambda = scenario.lambda;
    let theta: Vec<f64> = tau.iter().map(|t| 1.0 - t).collect();
    let top = h
        .iter()
        .zip(&theta)
        .filter(|(_, &t)| t > 0.0)
        .map(|(f, &t)| t * f.at(1.0))
        .fold(f64::NEG_INFINITY, f64::max);
    let linear: f64 = tau.iter().zip(&scenario.buyers).map(|(t, b)| t * b.budget).sum();
    if top <= lambda {
        return linear;
    }
    let mut breaks = Vec::new();
    for (f, &t) in h.iter().zip(&theta) {
        if t > 0.0 {
            breaks.push(t * f.at(0.0));
            breaks.push(t * f.at(1.0));
            breaks.extend(f.kinks().into_iter().map(|k| t * f.at(k)));
        }
    }
    let tail = |s: f64| {
        let mut all_below = 1.0;
        for (f, &t) in h.iter().zip(&theta) {
            if t > 0.0 {
                all_below *= f.cdf(s / t);
            }
        }
        1.0 - all_below
    };
    // The score range can be short; spread the full node budget over it.
    let spread = QuadratureConfig {
        nodes: (quad.nodes as f64 / (top - lambda)).ceil() as usize,
        ..quad
    };
    spread.integrate_split(tail, lambda, top, &breaks) + linear
}

/// Projected gradient descent on the dual; returns `theta = 1 - tau`.
pub fn solve_dual(kind: MechanismKind, scenario: &Scenario, opts: &SolverOptions) -> Result<SolveReport> {
    let h = dual_score_functions(kind, scenario)?;
    let n = scenario.n();
    if kind == MechanismKind::Broa {
        for (i, b) in scenario.buyers.iter().enumerate() {
            if !b.qf.virtualize().is_strictly_increasing(1001) {
                return Err(Error::DegenerateInput(format!(
                    "buyer {i}: virtual bid function is not strictly increasing"
                )));
            }
        }
    } else {
        for (i, f) in h.iter().enumerate() {
            if f.inverse_lipschitz_lower(1001) <= 0.0 {
                return Err(Error::DegenerateInput(format!(
                    "buyer {i}: bid function is not strictly increasing"
                )));
            }
        }
    }
    let budgets = scenario.budgets();
    let mut tau = vec![0.0; n];
    let mut trace = Vec::new();
    let mut value = dual_value_with(&h, scenario, &tau, opts.quad);
    let mut iterations = 0;
    let mut converged = false;
    let mut diagnostics = Vec::new();
    let mut max_res = f64::INFINITY;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    while iterations < opts.max_iters {
        let theta: Vec<f64> = tau.iter().map(|t| 1.0 - t).collect();
        let pay = payments_at(kind, scenario, &theta, opts.quad)?;
        let (_, r) = residuals(&theta, &pay, &budgets);
        max_res = r;
        if opts.trace {
            trace.push(TraceEntry {
                iteration: iterations,
                params: theta.clone(),
                objective: value,
                max_residual: r,
            });
        }
        if r < opts.residual_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let grad: Vec<f64> = budgets.iter().zip(&pay).map(|(b, p)| b - p).collect();
        // Barzilai-Borwein trial step, then Armijo backtracking.
        let mut step = match &prev {
            Some((t0, g0)) => {
                let (mut ss, mut sy) = (0.0, 0.0);
                for k in 0..n {
                    let (ds, dy) = (tau[k] - t0[k], grad[k] - g0[k]);
                    ss += ds * ds;
                    sy += ds * dy;
                }
                if sy > 0.0 {
                    (ss / sy).clamp(1e-3, 1e6)
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        prev = Some((tau.clone(), grad.clone()));
        let mut accepted = false;
        let mut stalled = false;
        while step > 1e-12 {
            let cand: Vec<f64> = tau
                .iter()
                .zip(&grad)
                .map(|(t, g)| (t - step * g).clamp(0.0, 1.0))
                .collect();
            let decrease: f64 = grad.iter().zip(cand.iter().zip(&tau)).map(|(g, (c, t))| g * (c - t)).sum();
            let cand_value = dual_value_with(&h, scenario, &cand, opts.quad);
            if cand_value <= value + 1e-4 * decrease {
                let moved = cand.iter().zip(&tau).map(|(c, t)| (c - t).abs()).fold(0.0, f64::max);
                stalled = moved < 1e-15;
                tau = cand;
                value = cand_value;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted || stalled {
            diagnostics.push(format!(
                "line search stalled at iteration {iterations} with residual {r:.3e}"
            ));
            break;
        }
    }
    let mut theta: Vec<f64> = tau.iter().map(|t| 1.0 - t).collect();
    if !converged {
        let rounds = polish(kind, scenario, &mut theta, opts)?;
        diagnostics.push(format!(
            "finished with {rounds} coordinate root-finding rounds from residual {max_res:.3e}"
        ));
        tau = theta.iter().map(|t| 1.0 - t).collect();
        value = dual_value_with(&h, scenario, &tau, opts.quad);
        converged = rounds < POLISH_ROUNDS;
    }
    let mut report = finish_report(kind, SolveMethod::Dual, scenario, theta, opts)?;
    report.dual = Some(tau);
    report.dual_value = Some(value);
    report.duality_gap = Some((value - report.revenue).abs());
    report.iterations = iterations;
    report.converged = converged || report.max_residual <= opts.comp_tol;
    report.diagnostics = diagnostics;
    if opts.trace {
        report.trace = Some(trace);
    }
    if !report.converged {
        return Err(Error::NonConvergence {
            iterations,
            residual: max_res.min(report.max_residual),
        });
    }
    Ok(report)
}

const POLISH_ROUNDS: usize = 50;

/// Gauss-Seidel rounds that re-solve each buyer's complementarity condition in
/// its own multiplier, starting from a near-optimal tuple. Returns the number
/// of rounds used.
fn polish(kind: MechanismKind, scenario: &Scenario, theta: &mut [f64], opts: &SolverOptions) -> Result<usize> {
    let budgets = scenario.budgets();
    for round in 0..POLISH_ROUNDS {
        let pay = payments_at(kind, scenario, theta, opts.quad)?;
        if residuals(theta, &pay, &budgets).1 < opts.residual_tol {
            return Ok(round);
        }
        for i in 0..theta.len() {
            theta[i] = local_budget_root(kind, scenario, theta, i, opts)?;
        }
    }
    Ok(POLISH_ROUNDS)
}

/// Largest `theta_i` near its current value with buyer `i` within budget, or
/// 1 when the budget never binds.
fn local_budget_root(
    kind: MechanismKind,
    scenario: &Scenario,
    theta: &[f64],
    i: usize,
    opts: &SolverOptions,
) -> Result<f64> {
    let budget = scenario.buyers[i].budget;
    let mut probe = theta.to_vec();
    let mut pay = |t: f64| -> Result<f64> {
        probe[i] = t;
        payment_of(kind, scenario, &probe, i, opts.quad)
    };
    if pay(1.0)? <= budget {
        return Ok(1.0);
    }
    let t = theta[i];
    let mut width = 1e-4;
    let (mut lo, mut hi);
    loop {
        lo = (t - width).max(0.0);
        hi = (t + width).min(1.0);
        let below = lo == 0.0 || pay(lo)? <= budget;
        let above = hi == 1.0 || pay(hi)? > budget;
        if below && above {
            break;
        }
        width *= 4.0;
    }
    let (a, _) = crate::roots::bisect_predicate(lo, hi, opts.bisect_tol, |x| {
        pay(x).map_or(false, |p| p <= budget)
    });
    Ok(a)
}

/// Largest `theta_i` in `[from, 1]` keeping buyer `i` within budget, holding
/// the other multipliers fixed.
fn best_response(
    kind: MechanismKind,
    scenario: &Scenario,
    theta: &[f64],
    i: usize,
    from: f64,
    opts: &SolverOptions,
    diagnostics: &mut Vec<String>,
) -> Result<f64> {
    let budget = scenario.buyers[i].budget;
    let mut probe = theta.to_vec();
    let mut pay = |t: f64| -> Result<f64> {
        probe[i] = t;
        payment_of(kind, scenario, &probe, i, opts.quad)
    };
    if pay(1.0)? <= budget {
        return Ok(1.0);
    }
    let p_from = pay(from)?;
    if p_from > budget + opts.feas_tol {
        diagnostics.push(format!(
            "buyer {i}: payment {p_from:.6e} exceeds budget {budget:.6e} at the current multiplier {from:.6e}"
        ));
        return Ok(from);
    }
    let (mut lo, mut hi) = (from, 1.0);
    let mut last_err = None;
    for _ in 0..200 {
        if hi - lo <= opts.bisect_tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        match pay(mid) {
            Ok(p) if p <= budget => lo = mid,
            Ok(_) => hi = mid,
            Err(e) => {
                last_err = Some(e);
                break;
            }
        }
    }
    if let Some(e) = last_err {
        return Err(e);
    }
    Ok(lo)
}

/// Entrywise-largest budget-feasible tuple by coordinate ascent from zero.
pub fn solve_max_tuple(kind: MechanismKind, scenario: &Scenario, opts: &SolverOptions) -> Result<SolveReport> {
    if !matches!(kind, MechanismKind::Bdfpa | MechanismKind::Pfpa) {
        return Err(Error::InvalidSpec(format!(
            "max-tuple method applies to bdfpa and pfpa, not {kind}"
        )));
    }
    let n = scenario.n();
    let mut diagnostics = Vec::new();
    for (i, b) in scenario.buyers.iter().enumerate() {
        if b.qf.inverse_lipschitz_lower(1001) <= 0.0 {
            diagnostics.push(format!(
                "buyer {i}: bid function has a flat part; payments may jump in the multiplier"
            ));
        }
    }
    let mut theta = vec![0.0; n];
    let mut trace = Vec::new();
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < opts.max_iters {
        sweeps += 1;
        let before = theta.clone();
        for i in 0..n {
            theta[i] = best_response(kind, scenario, &theta, i, theta[i], opts, &mut diagnostics)?;
        }
        if theta.iter().zip(&before).any(|(a, b)| a < b) {
            return Err(Error::Inconsistency(
                "coordinate ascent decreased a multiplier".into(),
            ));
        }
        let moved = theta
            .iter()
            .zip(&before)
            .map(|(a, b)| a - b)
            .fold(0.0, f64::max);
        if moved > opts.sweep_tol {
            extrapolate(kind, scenario, &mut theta, &before, opts.quad)?;
        }
        if opts.trace {
            let pay = payments_at(kind, scenario, &theta, opts.quad)?;
            let (_, r) = residuals(&theta, &pay, &scenario.budgets());
            trace.push(TraceEntry {
                iteration: sweeps,
                params: theta.clone(),
                objective: moved,
                max_residual: r,
            });
        }
        if moved <= opts.sweep_tol {
            if kind == MechanismKind::Bdfpa && extend_along_ray(scenario, &mut theta, opts)? {
                diagnostics.push(format!(
                    "sweep {sweeps}: scaled the paying buyers' multipliers up along a constant-payment ray"
                ));
                continue;
            }
            converged = true;
            break;
        }
    }
    let mut report = finish_report(kind, SolveMethod::MaxTuple, scenario, theta, opts)?;
    report.iterations = sweeps;
    report.converged = converged && report.max_residual <= opts.comp_tol;
    report.diagnostics = diagnostics;
    if opts.trace {
        report.trace = Some(trace);
    }
    if !report.converged {
        return Err(Error::NonConvergence {
            iterations: sweeps,
            residual: report.max_residual,
        });
    }
    if kind == MechanismKind::Bdfpa {
        report.uniqueness = Some(check_uniqueness_ebdfpa(scenario, &report, opts)?);
    }
    Ok(report)
}

/// Pushes `theta` further along the last sweep's step, doubling the stride
/// while every buyer stays within budget. Any such tuple still lies below
/// the largest feasible one, so ascent resumes from there.
fn extrapolate(
    kind: MechanismKind,
    scenario: &Scenario,
    theta: &mut [f64],
    before: &[f64],
    quad: QuadratureConfig,
) -> Result<()> {
    let step: Vec<f64> = theta.iter().zip(before).map(|(a, b)| a - b).collect();
    let budgets = scenario.budgets();
    let base = theta.to_vec();
    let mut stride = 1.0;
    for _ in 0..30 {
        stride *= 2.0;
        let cand: Vec<f64> = base
            .iter()
            .zip(&step)
            .map(|(t, d)| (t + stride * d).min(1.0))
            .collect();
        let pay = payments_at(kind, scenario, &cand, quad)?;
        if pay.iter().zip(&budgets).any(|(p, b)| p > b) {
            break;
        }
        let capped = cand.iter().zip(theta.iter()).all(|(c, t)| c == t);
        theta.copy_from_slice(&cand);
        if capped {
            break;
        }
    }
    Ok(())
}

/// When all paying buyers always beat the reserve and every other buyer, a
/// common scaling of their multipliers leaves payments unchanged; push that
/// scaling to the cap. Returns whether the tuple moved.
fn extend_along_ray(scenario: &Scenario, theta: &mut [f64], opts: &SolverOptions) -> Result<bool> {
    let kind = MechanismKind::Bdfpa;
    let pay = payments_at(kind, scenario, theta, opts.quad)?;
    let paying: Vec<usize> = (0..theta.len()).filter(|&i| pay[i] > opts.pay_tol).collect();
    let top = paying.iter().map(|&i| theta[i]).fold(0.0, f64::max);
    if paying.is_empty() || top >= 1.0 || top <= 0.0 {
        return Ok(false);
    }
    let mut cand = theta.to_vec();
    for &i in &paying {
        cand[i] = (theta[i] / top).min(1.0);
    }
    let cand_pay = payments_at(kind, scenario, &cand, opts.quad)?;
    let same = cand_pay
        .iter()
        .zip(&pay)
        .zip(&scenario.buyers)
        .all(|((c, p), b)| (c - p).abs() <= opts.feas_tol && *c <= b.budget + opts.feas_tol);
    if same {
        theta.copy_from_slice(&cand);
    }
    Ok(same)
}

/// Payment of buyer 0 when every buyer uses multiplier `m`.
fn symmetric_payment(kind: MechanismKind, scenario: &Scenario, m: f64, quad: QuadratureConfig) -> Result<f64> {
    payment_of(kind, scenario, &vec![m; scenario.n()], 0, quad)
}

/// Largest common multiplier whose symmetric payment equals `budget`, or 1
/// when the budget is not reached at 1.
pub(crate) fn largest_budget_root(
    mut pay: impl FnMut(f64) -> Result<f64>,
    lo: f64,
    budget: f64,
    bisect_tol: f64,
    diagnostics: &mut Vec<String>,
) -> Result<f64> {
    const SCAN: usize = 64;
    let p_top = pay(1.0)?;
    if p_top <= budget {
        return Ok(1.0);
    }
    let step = (1.0 - lo) / SCAN as f64;
    let mut upper = 1.0;
    let mut prev_p = p_top;
    let mut found = None;
    for k in 1..=SCAN {
        let m = 1.0 - k as f64 * step;
        let p = pay(m)?;
        if p > prev_p + 1e-12 {
            diagnostics.push(format!(
                "payment is not monotone in the common multiplier near {m:.4}"
            ));
        }
        prev_p = p;
        if p < budget {
            found = Some((m, upper));
            break;
        }
        upper = m;
    }
    let Some((mut a, mut b)) = found else {
        return Err(Error::RootBracketFailure {
            what: "common multiplier".into(),
            lo,
            hi: 1.0,
            f_lo: pay(lo)?,
            f_hi: p_top,
            target: budget,
        });
    };
    for _ in 0..200 {
        if b - a <= bisect_tol {
            break;
        }
        let mid = 0.5 * (a + b);
        if pay(mid)? < budget {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(a)
}

/// Largest budget-extracting common multiplier of a symmetric scenario.
pub fn solve_symmetric(kind: MechanismKind, scenario: &Scenario, opts: &SolverOptions) -> Result<SolveReport> {
    if kind == MechanismKind::Broa {
        return Err(Error::InvalidSpec(
            "symmetric method applies to bdfpa, pfpa, bdspa and pspa".into(),
        ));
    }
    scenario.require_symmetric()?;
    let budget = scenario.buyers[0].budget;
    let top_bid = scenario.buyers[0].qf.at(1.0);
    let lo = (scenario.lambda / top_bid).min(1.0);
    let mut diagnostics = Vec::new();
    let m = largest_budget_root(
        |m| symmetric_payment(kind, scenario, m, opts.quad),
        lo,
        budget,
        opts.bisect_tol,
        &mut diagnostics,
    )?;
    let mut report = finish_report(kind, SolveMethod::Symmetric, scenario, vec![m; scenario.n()], opts)?;
    report.iterations = 1;
    report.converged = report.max_residual <= opts.comp_tol;
    report.diagnostics = diagnostics;
    if !report.converged {
        return Err(Error::NonConvergence {
            iterations: 1,
            residual: report.max_residual,
        });
    }
    Ok(report)
}

/// Dispatches on the method, checking that it suits the mechanism.
pub fn solve(kind: MechanismKind, method: SolveMethod, scenario: &Scenario, opts: &SolverOptions) -> Result<SolveReport> {
    match (method, kind) {
        (SolveMethod::Dual, MechanismKind::Bdfpa | MechanismKind::Broa) => {
            let mut report = solve_dual(kind, scenario, opts)?;
            if kind == MechanismKind::Bdfpa {
                report.uniqueness = Some(check_uniqueness_ebdfpa(scenario, &report, opts)?);
            }
            Ok(report)
        }
        (SolveMethod::MaxTuple, MechanismKind::Bdfpa | MechanismKind::Pfpa) => {
            solve_max_tuple(kind, scenario, opts)
        }
        (SolveMethod::Symmetric, kind) if kind != MechanismKind::Broa => {
            solve_symmetric(kind, scenario, opts)
        }
        _ => Err(Error::InvalidSpec(format!(
            "method {method:?} does not apply to {kind}"
        ))),
    }
}

/// Decides whether the budget-extracting BDFPA tuple is unique; when it is
/// not, exhibits a second tuple with the same payments.
pub fn check_uniqueness_ebdfpa(scenario: &Scenario, report: &SolveReport, opts: &SolverOptions) -> Result<Uniqueness> {
    let theta = &report.params;
    let pay = &report.payments;
    let n = scenario.n();
    let paying: Vec<usize> = (0..n).filter(|&i| pay[i] > opts.pay_tol).collect();
    let idle: Vec<usize> = (0..n).filter(|&i| pay[i] <= opts.pay_tol).collect();
    let floor = idle
        .iter()
        .map(|&i| theta[i] * scenario.buyers[i].qf.at(1.0))
        .fold(scenario.lambda, f64::max);
    let lowest_top = paying
        .iter()
        .map(|&i| theta[i] * scenario.buyers[i].qf.at(0.0))
        .fold(f64::NEG_INFINITY, f64::max);
    let separation_holds = paying.is_empty() || lowest_top <= floor;
    let some_budget_slack = paying
        .iter()
        .any(|&i| pay[i] < scenario.buyers[i].budget - opts.feas_tol);
    if separation_holds || some_budget_slack {
        return Ok(Uniqueness::Unique {
            separation_holds,
            some_budget_slack,
        });
    }
    let nu_min = floor / lowest_top;
    let nu = 0.5 * (nu_min + 1.0);
    let mut params = theta.clone();
    for &i in &paying {
        params[i] *= nu;
    }
    let payments = payments_at(MechanismKind::Bdfpa, scenario, &params, opts.quad)?;
    let max_payment_difference = payments
        .iter()
        .zip(pay)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(Uniqueness::NonUnique {
        witness: WitnessTuple {
            nu,
            params,
            payments,
            max_payment_difference,
        },
    })
}
