//! Interim and expected quantities by deterministic one-dimensional quadrature.
//!
//! All `n`-dimensional expectations reduce to integrals over a buyer's own
//! quantile, using the distribution of the best competing score
//! `max(max_{j != i} theta_j h_j(q_j), lambda)` (the G-function).

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mechanisms::{MechanismKind, MechanismSpec, PreparedAuction, Scenario};
use crate::quadrature::{gauss_legendre_nodes, QuadratureConfig, QuadratureRule};

/// Doubling the node count must move every reported quantity by less than this.
pub const CONVERGENCE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BuyerOutcome {
    pub payment: f64,
    pub utility: f64,
    pub win_probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureDiagnostics {
    pub nodes: usize,
    /// Largest change in any reported quantity when the node count is doubled;
    /// `None` when the check was skipped.
    pub error_estimate: Option<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeProfile {
    pub mechanism: MechanismKind,
    pub params: Vec<f64>,
    pub buyers: Vec<BuyerOutcome>,
    pub revenue: f64,
    pub allocation_probability: f64,
    pub quadrature: QuadratureDiagnostics,
}

impl OutcomeProfile {
    pub fn payments(&self) -> Vec<f64> {
        self.buyers.iter().map(|b| b.payment).collect()
    }

    pub fn utilities(&self) -> Vec<f64> {
        self.buyers.iter().map(|b| b.utility).collect()
    }

    pub fn win_probabilities(&self) -> Vec<f64> {
        self.buyers.iter().map(|b| b.win_probability).collect()
    }

    /// Largest absolute difference in any payment, utility or the revenue.
    pub fn max_discrepancy(&self, other: &OutcomeProfile) -> f64 {
        let per_buyer = self
            .buyers
            .iter()
            .zip(&other.buyers)
            .map(|(a, b)| {
                (a.payment - b.payment)
                    .abs()
                    .max((a.utility - b.utility).abs())
            })
            .fold(0.0, f64::max);
        per_buyer.max((self.revenue - other.revenue).abs())
    }
}

/// A mechanism bound to a scenario and a quadrature rule.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub auction: PreparedAuction,
    pub quad: QuadratureConfig,
}

impl Evaluator {
    pub fn new(spec: &MechanismSpec, scenario: &Scenario, quad: QuadratureConfig) -> Result<Self> {
        quad.validate()?;
        Ok(Self {
            auction: PreparedAuction::new(spec, scenario)?,
            quad,
        })
    }

    fn lambda(&self) -> f64 {
        self.auction.lambda
    }

    /// Probability that the best competing score against buyer `i`, floored
    /// at the reserve, is at most `s`.
    pub fn g(&self, i: usize, s: f64) -> f64 {
        if s < self.lambda() {
            return 0.0;
        }
        let a = &self.auction;
        let mut prod = 1.0;
        for j in 0..a.n() {
            if j == i || a.theta[j] == 0.0 {
                continue;
            }
            prod *= a.scores[j].cdf(s / a.theta[j]);
            if prod == 0.0 {
                break;
            }
        }
        prod
    }

    /// Interim probability that buyer `i` wins at own quantile `q`.
    pub fn win_probability_at(&self, i: usize, q: f64) -> f64 {
        let a = &self.auction;
        if a.theta[i] == 0.0 {
            return 0.0;
        }
        let s = a.score(i, q);
        if s < self.lambda() {
            0.0
        } else {
            self.g(i, s)
        }
    }

    /// Smallest own quantile at which buyer `i` can clear the reserve, or
    /// `None` when the buyer never can.
    pub fn reserve_quantile(&self, i: usize) -> Option<f64> {
        let a = &self.auction;
        let theta = a.theta[i];
        if theta == 0.0 || theta * a.scores[i].at(1.0) <= self.lambda() {
            return None;
        }
        Some(a.scores[i].cdf(self.lambda() / theta))
    }

    /// Score values at which the G-function of buyer `i` may have kinks,
    /// including the reserve, sorted ascending.
    fn score_breaks(&self, i: usize) -> Vec<f64> {
        let a = &self.auction;
        let mut out = vec![self.lambda()];
        for j in 0..a.n() {
            if j == i || a.theta[j] == 0.0 {
                continue;
            }
            let h = &a.scores[j];
            let t = a.theta[j];
            out.push(t * h.at(0.0));
            out.push(t * h.at(1.0));
            out.extend(h.kinks().into_iter().map(|k| t * h.at(k)));
        }
        out.retain(|&b| b >= self.lambda());
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    /// Quadrature nodes over the own-quantile range where buyer `i` can win.
    fn outer_nodes(&self, i: usize, breaks: &[f64]) -> Vec<(f64, f64)> {
        let Some(q_r) = self.reserve_quantile(i) else {
            return Vec::new();
        };
        let a = &self.auction;
        let (lo, mut cuts) = if self.quad.split_at_reserve {
            let theta = a.theta[i];
            let h = &a.scores[i];
            let top = theta * h.at(1.0);
            let mut cuts: Vec<f64> = h.kinks();
            cuts.extend(
                breaks
                    .iter()
                    .filter(|&&b| b > self.lambda() && b < top)
                    .map(|&b| h.cdf(b / theta)),
            );
            (q_r, cuts)
        } else {
            (0.0, Vec::new())
        };
        cuts.retain(|&c| c > lo && c < 1.0);
        cuts.push(lo);
        cuts.push(1.0);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();

        let n = self.quad.nodes as f64;
        let mut nodes = Vec::new();
        for w in cuts.windows(2) {
            let (x0, x1) = (w[0], w[1]);
            let len = x1 - x0;
            if len <= 0.0 {
                continue;
            }
            match self.quad.rule {
                QuadratureRule::Trapezoid => {
                    let m = ((n * len).ceil() as usize).max(2);
                    let h = len / m as f64;
                    for k in 0..=m {
                        let weight = if k == 0 || k == m { 0.5 * h } else { h };
                        let q = if k == m { x1 } else { x0 + k as f64 * h };
                        nodes.push((q, weight));
                    }
                }
                QuadratureRule::GaussLegendre => {
                    let panels = ((n * len / 8.0).ceil() as usize).max(1);
                    let h = len / panels as f64;
                    for p in 0..panels {
                        let a0 = x0 + p as f64 * h;
                        nodes.extend(gauss_legendre_nodes(a0, a0 + h));
                    }
                }
            }
        }
        nodes
    }

    /// Integral of the G-function of buyer `i` over `[a, b]`, split at `breaks`.
    fn g_integral(&self, i: usize, a: f64, b: f64, breaks: &[f64], max_width: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut points = vec![a];
        points.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
        points.push(b);
        let mut total = 0.0;
        for w in points.windows(2) {
            let len = w[1] - w[0];
            let panels = ((len / max_width).ceil() as usize).max(1);
            let h = len / panels as f64;
            for p in 0..panels {
                let a0 = w[0] + p as f64 * h;
                total += gauss_legendre_nodes(a0, a0 + h)
                    .iter()
                    .map(|&(t, wt)| wt * self.g(i, t))
                    .sum::<f64>();
            }
        }
        total
    }

    /// Expected payment, utility and win probability of buyer `i`.
    pub fn buyer(&self, i: usize) -> BuyerOutcome {
        let a = &self.auction;
        let breaks = self.score_breaks(i);
        let nodes = self.outer_nodes(i, &breaks);
        if nodes.is_empty() {
            return BuyerOutcome::default();
        }
        let theta = a.theta[i];
        let lambda = self.lambda();
        let top = theta * a.scores[i].at(1.0);
        let max_width = (top - lambda).max(f64::MIN_POSITIVE) / self.quad.nodes as f64;

        let mut payment = 0.0;
        let mut win = 0.0;
        let mut value = 0.0;
        let mut below = 0.0;
        let mut prev_score = lambda;
        let q_r = self.reserve_quantile(i).unwrap_or(1.0);
        for &(q, w) in &nodes {
            if q < q_r {
                continue;
            }
            let s = a.score(i, q).max(lambda);
            let x = self.g(i, s);
            win += w * x;
            value += w * a.values[i].at(q) * x;
            let interim = match a.kind {
                MechanismKind::Bdfpa => a.bids[i].at(q) * x,
                MechanismKind::Pfpa => theta * a.bids[i].at(q) * x,
                MechanismKind::Broa => a.scores[i].at(q) * x,
                MechanismKind::Bdspa | MechanismKind::Pspa => {
                    if s > prev_score {
                        below += self.g_integral(i, prev_score, s, &breaks, max_width);
                        prev_score = s;
                    }
                    let price_mass = s * x - below;
                    if a.kind == MechanismKind::Bdspa {
                        price_mass / theta
                    } else {
                        price_mass
                    }
                }
            };
            payment += w * interim;
        }
        BuyerOutcome {
            payment,
            utility: value - payment,
            win_probability: win,
        }
    }

    pub fn buyers(&self) -> Vec<BuyerOutcome> {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            (0..self.auction.n())
                .into_par_iter()
                .map(|i| self.buyer(i))
                .collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..self.auction.n()).map(|i| self.buyer(i)).collect()
        }
    }

    pub fn payments(&self) -> Vec<f64> {
        self.buyers().into_iter().map(|b| b.payment).collect()
    }

    /// Outcome profile at the configured node count, without the doubling check.
    pub fn profile_unchecked(&self) -> OutcomeProfile {
        let buyers = self.buyers();
        let allocation_probability: f64 = buyers.iter().map(|b| b.win_probability).sum();
        let revenue =
            buyers.iter().map(|b| b.payment).sum::<f64>() - self.lambda() * allocation_probability;
        OutcomeProfile {
            mechanism: self.auction.kind,
            params: self.auction.theta.clone(),
            buyers,
            revenue,
            allocation_probability,
            quadrature: QuadratureDiagnostics {
                nodes: self.quad.nodes,
                error_estimate: None,
                converged: false,
            },
        }
    }

    /// Outcome profile with a convergence estimate from a doubled node count.
    pub fn profile(&self) -> OutcomeProfile {
        let mut base = self.profile_unchecked();
        let finer = Evaluator {
            auction: self.auction.clone(),
            quad: self.quad.doubled(),
        }
        .profile_unchecked();
        let err = base.max_discrepancy(&finer).max(
            base.buyers
                .iter()
                .zip(&finer.buyers)
                .map(|(a, b)| (a.win_probability - b.win_probability).abs())
                .fold(0.0, f64::max),
        );
        base.quadrature.error_estimate = Some(err);
        base.quadrature.converged = err < CONVERGENCE_TOL;
        base
    }

    /// Expected payment of buyer `i` under BROA computed directly from the
    /// threshold-price rule, as a Stieltjes integral against the G-function.
    pub fn broa_threshold_payment(&self, i: usize) -> f64 {
        let a = &self.auction;
        let theta = a.theta[i];
        let lambda = self.lambda();
        if theta == 0.0 || theta * a.scores[i].at(1.0) <= lambda {
            return 0.0;
        }
        let top = theta * a.scores[i].at(1.0);
        let z = |t: f64| a.scores[i].cdf(t / theta);
        let price = |t: f64| {
            let zt = z(t);
            a.bids[i].at(zt) * (1.0 - zt)
        };
        let mut total = price(lambda) * self.g(i, lambda);
        let m = 4 * self.quad.nodes;
        let h = (top - lambda) / m as f64;
        let mut g_prev = self.g(i, lambda);
        for k in 0..m {
            let t1 = lambda + (k + 1) as f64 * h;
            let g_next = self.g(i, t1);
            total += price(t1 - 0.5 * h) * (g_next - g_prev);
            g_prev = g_next;
        }
        total
    }
}

pub fn g_function(spec: &MechanismSpec, scenario: &Scenario, i: usize, s: f64) -> Result<f64> {
    Ok(Evaluator::new(spec, scenario, QuadratureConfig::default())?.g(i, s))
}

pub fn interim_win_probability(
    spec: &MechanismSpec,
    scenario: &Scenario,
    i: usize,
    q: f64,
) -> Result<f64> {
    Ok(Evaluator::new(spec, scenario, QuadratureConfig::default())?.win_probability_at(i, q))
}

pub fn expected_payment(
    spec: &MechanismSpec,
    scenario: &Scenario,
    i: usize,
    quad: QuadratureConfig,
) -> Result<f64> {
    Ok(Evaluator::new(spec, scenario, quad)?.buyer(i).payment)
}

pub fn expected_utility(
    spec: &MechanismSpec,
    scenario: &Scenario,
    i: usize,
    quad: QuadratureConfig,
) -> Result<f64> {
    Ok(Evaluator::new(spec, scenario, quad)?.buyer(i).utility)
}

pub fn outcome_profile(
    spec: &MechanismSpec,
    scenario: &Scenario,
    quad: QuadratureConfig,
) -> Result<OutcomeProfile> {
    Ok(Evaluator::new(spec, scenario, quad)?.profile())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qfspace::QuantileFunction;

    fn example(kind: MechanismKind, theta: f64) -> Evaluator {
        let s = Scenario::symmetric(QuantileFunction::identity(), 0.312, 2, 0.1).unwrap();
        Evaluator::new(
            &MechanismSpec::uniform(kind, theta, 2),
            &s,
            QuadratureConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn g_function_closed_forms() {
        let ev = example(MechanismKind::Bdfpa, 0.25);
        assert_eq!(ev.g(0, 0.05), 0.0);
        assert!((ev.g(0, 0.15) - 0.6).abs() < 1e-15);
        assert_eq!(ev.g(0, 0.3), 1.0);
        // The atom at the reserve: competitor below 0.1 / 0.25 = 0.4.
        assert!((ev.g(0, 0.1) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn interim_win_probability_examples() {
        let ev = example(MechanismKind::Bdfpa, 0.25);
        assert!((ev.win_probability_at(0, 0.8) - 0.8).abs() < 1e-15);
        assert_eq!(ev.win_probability_at(0, 0.3), 0.0);
        let zero = example(MechanismKind::Bdfpa, 0.0);
        assert_eq!(zero.win_probability_at(0, 1.0), 0.0);
    }

    #[test]
    fn example_payments() {
        let cases = [
            (MechanismKind::Bdfpa, 0.25, 0.312, 0.54),
            (MechanismKind::Broa, 1.0, 0.207, 0.34425),
            (MechanismKind::Pspa, 1.0, 0.171, 0.243),
            (MechanismKind::Bdspa, 1.0, 0.171, 0.243),
        ];
        for (kind, theta, pay, rev) in cases {
            let p = example(kind, theta).profile();
            assert!(p.quadrature.converged, "{kind}: {:?}", p.quadrature);
            for b in &p.buyers {
                assert!((b.payment - pay).abs() < 1e-6, "{kind}: {}", b.payment);
            }
            assert!((p.revenue - rev).abs() < 1e-6, "{kind}: {}", p.revenue);
        }
    }

    #[test]
    fn truthful_first_price_utility_is_zero() {
        let p = example(MechanismKind::Bdfpa, 0.6).profile();
        for b in &p.buyers {
            assert!(b.utility.abs() < 1e-12);
        }
    }

    #[test]
    fn zero_multipliers_give_zero_profile() {
        for kind in MechanismKind::ALL {
            let p = example(kind, 0.0).profile();
            assert_eq!(p.revenue, 0.0);
            assert!(p.buyers.iter().all(|b| *b == BuyerOutcome::default()));
        }
    }

    #[test]
    fn broa_threshold_route_matches_virtual_surplus() {
        let ev = example(MechanismKind::Broa, 1.0);
        let direct = ev.broa_threshold_payment(0);
        assert!((direct - 0.207).abs() < 1e-5, "{direct}");
    }

    #[test]
    fn gauss_legendre_agrees_with_trapezoid() {
        let s = Scenario::symmetric(QuantileFunction::identity(), 0.312, 3, 0.1).unwrap();
        for kind in MechanismKind::ALL {
            let spec = MechanismSpec::new(kind, vec![0.9, 0.7, 0.8]);
            let trap = outcome_profile(&spec, &s, QuadratureConfig::default()).unwrap();
            let gl = outcome_profile(
                &spec,
                &s,
                QuadratureConfig {
                    rule: QuadratureRule::GaussLegendre,
                    ..QuadratureConfig::default()
                },
            )
            .unwrap();
            assert!(trap.max_discrepancy(&gl) < 1e-6, "{kind}");
        }
    }
}
