//! Scenarios and the ex-post allocation/payment rules of the five mechanisms.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qfspace::QuantileFunction;

/// Scores closer than this are treated as tied.
pub const TIE_TOL: f64 = 1e-12;
/// Bisection tolerance (in quantile) for the threshold-price search.
pub const THRESHOLD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismKind {
    /// Bid-discount first price: rank by `theta_i * bid`, pay the raw bid.
    Bdfpa,
    /// Pacing first price: rank by `theta_i * bid`, pay the paced bid.
    Pfpa,
    /// Boosted reserve optimal auction: rank by `theta_i * virtual bid`, pay
    /// the smallest winning bid.
    Broa,
    /// Bid-discount second price: pay the competing score divided by `theta_i`.
    Bdspa,
    /// Pacing second price: pay the competing score.
    Pspa,
}

impl MechanismKind {
    pub const ALL: [MechanismKind; 5] = [
        MechanismKind::Bdfpa,
        MechanismKind::Pfpa,
        MechanismKind::Broa,
        MechanismKind::Bdspa,
        MechanismKind::Pspa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MechanismKind::Bdfpa => "bdfpa",
            MechanismKind::Pfpa => "pfpa",
            MechanismKind::Broa => "broa",
            MechanismKind::Bdspa => "bdspa",
            MechanismKind::Pspa => "pspa",
        }
    }

    /// Whether scores are computed from virtual bids rather than raw bids.
    pub fn ranks_virtual_bids(self) -> bool {
        self == MechanismKind::Broa
    }

    pub fn is_second_price(self) -> bool {
        matches!(self, MechanismKind::Bdspa | MechanismKind::Pspa)
    }

    /// The function scaled by `theta_i` to produce buyer `i`'s score.
    pub fn score_function(self, bid_qf: &QuantileFunction) -> QuantileFunction {
        if self.ranks_virtual_bids() {
            QuantileFunction::virtual_of(bid_qf.clone())
        } else {
            bid_qf.clone()
        }
    }
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MechanismKind {
    type Err = Error;

    /// Accepts the plain names and the `e`-prefixed budget-extracting aliases.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let name = match lower.as_str() {
            "ebdfpa" | "epfpa" | "ebdspa" | "epspa" => &lower[1..],
            other => other,
        };
        match name {
            "bdfpa" => Ok(MechanismKind::Bdfpa),
            "pfpa" => Ok(MechanismKind::Pfpa),
            "broa" => Ok(MechanismKind::Broa),
            "bdspa" => Ok(MechanismKind::Bdspa),
            "pspa" => Ok(MechanismKind::Pspa),
            _ => Err(Error::InvalidSpec(format!("unknown mechanism '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Buyer {
    /// Bidding quantile function.
    pub qf: QuantileFunction,
    pub budget: f64,
    /// True value quantile function; the bidding function when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_qf: Option<QuantileFunction>,
}

impl Buyer {
    pub fn truthful(qf: QuantileFunction, budget: f64) -> Self {
        Self {
            qf,
            budget,
            value_qf: None,
        }
    }

    pub fn value_qf(&self) -> &QuantileFunction {
        self.value_qf.as_ref().unwrap_or(&self.qf)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Seller's opportunity cost, which doubles as the reserve on scores.
    pub lambda: f64,
    pub buyers: Vec<Buyer>,
}

impl Scenario {
    pub fn new(lambda: f64, buyers: Vec<Buyer>) -> Result<Self> {
        let s = Self { lambda, buyers };
        s.validate()?;
        Ok(s)
    }

    /// `n` truthful buyers sharing one quantile function and budget.
    pub fn symmetric(qf: QuantileFunction, budget: f64, n: usize, lambda: f64) -> Result<Self> {
        Self::new(lambda, vec![Buyer::truthful(qf, budget); n])
    }

    pub fn n(&self) -> usize {
        self.buyers.len()
    }

    pub fn budgets(&self) -> Vec<f64> {
        self.buyers.iter().map(|b| b.budget).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.buyers.is_empty() {
            return Err(Error::InvalidScenario("scenario has no buyers".into()));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::InvalidScenario(format!(
                "lambda must lie in (0, 1), got {}",
                self.lambda
            )));
        }
        for (i, b) in self.buyers.iter().enumerate() {
            if !(b.budget > 0.0 && b.budget <= 1.0) {
                return Err(Error::InvalidScenario(format!(
                    "buyer {i}: budget must lie in (0, 1], got {}",
                    b.budget
                )));
            }
            b.qf.validate_bidding()
                .map_err(|e| Error::InvalidScenario(format!("buyer {i}: bidding qf: {e}")))?;
            if let Some(v) = &b.value_qf {
                v.validate_bidding()
                    .map_err(|e| Error::InvalidScenario(format!("buyer {i}: value qf: {e}")))?;
            }
        }
        Ok(())
    }

    /// Whether all buyers share a bidding function (on a grid), value function
    /// and budget, up to `tol`.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        let first = &self.buyers[0];
        let grid = 256;
        self.buyers[1..].iter().all(|b| {
            (b.budget - first.budget).abs() <= tol
                && (0..=grid).all(|k| {
                    let q = k as f64 / grid as f64;
                    (b.qf.at(q) - first.qf.at(q)).abs() <= tol
                        && (b.value_qf().at(q) - first.value_qf().at(q)).abs() <= tol
                })
        })
    }

    pub fn require_symmetric(&self) -> Result<()> {
        if self.is_symmetric(1e-12) {
            Ok(())
        } else {
            Err(Error::AsymmetricScenario(
                "buyers differ in bidding function, value function or budget".into(),
            ))
        }
    }

    /// Copy of the scenario with every bidding function replaced.
    pub fn with_bidding_qfs(&self, qfs: Vec<QuantileFunction>) -> Result<Self> {
        if qfs.len() != self.n() {
            return Err(Error::InvalidScenario(format!(
                "expected {} bidding functions, got {}",
                self.n(),
                qfs.len()
            )));
        }
        let buyers = self
            .buyers
            .iter()
            .zip(qfs)
            .map(|(b, qf)| Buyer {
                value_qf: Some(b.value_qf().clone()),
                qf,
                budget: b.budget,
            })
            .collect();
        Ok(Self {
            lambda: self.lambda,
            buyers,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismSpec {
    pub kind: MechanismKind,
    pub params: Vec<f64>,
}

impl MechanismSpec {
    pub fn new(kind: MechanismKind, params: Vec<f64>) -> Self {
        Self { kind, params }
    }

    pub fn uniform(kind: MechanismKind, theta: f64, n: usize) -> Self {
        Self::new(kind, vec![theta; n])
    }

    pub fn validate_for(&self, scenario: &Scenario) -> Result<()> {
        if self.params.len() != scenario.n() {
            return Err(Error::InvalidSpec(format!(
                "{} parameters given for {} buyers",
                self.params.len(),
                scenario.n()
            )));
        }
        if let Some((i, t)) = self
            .params
            .iter()
            .enumerate()
            .find(|(_, t)| !(0.0..=1.0).contains(*t))
        {
            return Err(Error::InvalidSpec(format!(
                "parameter {i} = {t} lies outside [0, 1]"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    #[default]
    LowestIndex,
    HighestIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExPostOutcome {
    pub winner: Option<usize>,
    /// Paid by the winner; zero when the item is unsold.
    pub payment: f64,
    /// Realized utility of each buyer (value minus payment for the winner).
    pub utilities: Vec<f64>,
}

/// Deterministic tie-breaking: the lowest index wins.
pub fn tie_break(candidates: &[usize]) -> usize {
    *candidates
        .iter()
        .min()
        .expect("tie_break needs at least one candidate")
}

/// A mechanism bound to a scenario, ready for repeated ex-post evaluation.
#[derive(Debug, Clone)]
pub struct PreparedAuction {
    pub kind: MechanismKind,
    pub theta: Vec<f64>,
    pub lambda: f64,
    pub bids: Vec<QuantileFunction>,
    pub values: Vec<QuantileFunction>,
    pub scores: Vec<QuantileFunction>,
    pub tie_break: TieBreak,
}

impl PreparedAuction {
    pub fn new(spec: &MechanismSpec, scenario: &Scenario) -> Result<Self> {
        spec.validate_for(scenario)?;
        let bids: Vec<_> = scenario.buyers.iter().map(|b| b.qf.clone()).collect();
        let values = scenario
            .buyers
            .iter()
            .map(|b| b.value_qf().clone())
            .collect();
        let scores = bids.iter().map(|f| spec.kind.score_function(f)).collect();
        Ok(Self {
            kind: spec.kind,
            theta: spec.params.clone(),
            lambda: scenario.lambda,
            bids,
            values,
            scores,
            tie_break: TieBreak::default(),
        })
    }

    pub fn with_tie_break(mut self, rule: TieBreak) -> Self {
        self.tie_break = rule;
        self
    }

    pub fn n(&self) -> usize {
        self.theta.len()
    }

    /// Score of buyer `i` at quantile `q`; zero-multiplier buyers score 0.
    pub fn score(&self, i: usize, q: f64) -> f64 {
        if self.theta[i] == 0.0 {
            0.0
        } else {
            self.theta[i] * self.scores[i].at(q)
        }
    }

    /// Winner and payment for the quantile profile `q`.
    pub fn resolve(&self, q: &[f64]) -> Result<(Option<usize>, f64)> {
        let n = self.n();
        let scores: Vec<f64> = (0..n).map(|i| self.score(i, q[i])).collect();
        let best = (0..n)
            .filter(|&i| self.theta[i] > 0.0)
            .map(|i| scores[i])
            .fold(f64::NEG_INFINITY, f64::max);
        if best < self.lambda {
            return Ok((None, 0.0));
        }
        let winner = {
            let mut pick = None;
            for i in 0..n {
                if self.theta[i] > 0.0 && scores[i] >= best - TIE_TOL {
                    pick = match (pick, self.tie_break) {
                        (None, _) | (Some(_), TieBreak::HighestIndex) => Some(i),
                        (Some(p), TieBreak::LowestIndex) => Some(p),
                    };
                }
            }
            pick.expect("a positive-multiplier buyer attains the best score")
        };
        let competing = (0..n)
            .filter(|&j| j != winner)
            .map(|j| scores[j])
            .fold(self.lambda, f64::max);
        let theta = self.theta[winner];
        let qi = q[winner];
        let payment = match self.kind {
            MechanismKind::Bdfpa => self.bids[winner].at(qi),
            MechanismKind::Pfpa => theta * self.bids[winner].at(qi),
            MechanismKind::Pspa => competing,
            MechanismKind::Bdspa => {
                if theta <= 0.0 {
                    return Err(Error::Inconsistency(
                        "second-price winner has a zero multiplier".into(),
                    ));
                }
                competing / theta
            }
            MechanismKind::Broa => self.threshold_bid(winner, qi, competing),
        };
        Ok((Some(winner), payment))
    }

    /// Smallest bid of buyer `i` whose boosted virtual score still reaches
    /// `competing`, searching quantiles up to `qi`.
    pub fn threshold_bid(&self, i: usize, qi: f64, competing: f64) -> f64 {
        let theta = self.theta[i];
        let score = |z: f64| theta * self.scores[i].at(z);
        if score(0.0) >= competing {
            return self.bids[i].at(0.0);
        }
        let (_, z) =
            crate::roots::bisect_predicate(0.0, qi, THRESHOLD_TOL, |z| score(z) < competing);
        self.bids[i].at(z)
    }

    pub fn allocate(&self, q: &[f64]) -> Result<ExPostOutcome> {
        if q.len() != self.n() {
            return Err(Error::InvalidSpec(format!(
                "quantile profile has {} entries for {} buyers",
                q.len(),
                self.n()
            )));
        }
        if let Some(&bad) = q.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Domain(bad));
        }
        let (winner, payment) = self.resolve(q)?;
        let mut utilities = vec![0.0; self.n()];
        if let Some(w) = winner {
            utilities[w] = self.values[w].at(q[w]) - payment;
        }
        Ok(ExPostOutcome {
            winner,
            payment,
            utilities,
        })
    }
}

/// Ex-post outcome of `spec` on `scenario` at quantile profile `q`.
pub fn allocate(spec: &MechanismSpec, scenario: &Scenario, q: &[f64]) -> Result<ExPostOutcome> {
    PreparedAuction::new(spec, scenario)?.allocate(q)
}
