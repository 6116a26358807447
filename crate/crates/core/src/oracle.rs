//! Monte Carlo oracle and ex-post property checks.
//!
//! Sampling is keyed by `(seed, block index)`: every block of
//! [`BLOCK_SAMPLES`] quantile profiles draws from its own ChaCha stream, so
//! blocks can run in any order and the fixed-order reduction makes estimates
//! bitwise reproducible.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::{Evaluator, OutcomeProfile};
use crate::mechanisms::{Buyer, MechanismKind, MechanismSpec, PreparedAuction, Scenario};
use crate::qfspace::QuantileFunction;
use crate::quadrature::QuadratureConfig;

pub const MIN_SAMPLES: usize = 10_000;
pub const BLOCK_SAMPLES: usize = 4096;
pub const DEFAULT_SAMPLES: usize = 1_000_000;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    /// Sample standard deviation over the square root of the sample count.
    pub standard_error: f64,
    pub sample_count: usize,
    pub seed: u64,
}

impl McEstimate {
    fn from_sums(sum: f64, sum_sq: f64, count: usize, seed: u64) -> Self {
        let n = count as f64;
        let mean = sum / n;
        let var = if count > 1 {
            ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        Self {
            mean,
            standard_error: (var / n).sqrt(),
            sample_count: count,
            seed,
        }
    }

    /// Distance to `exact` in standard errors. A zero-variance estimate
    /// matches only values within `1e-9`.
    pub fn standard_score(&self, exact: f64) -> f64 {
        let diff = (self.mean - exact).abs();
        if self.standard_error > 0.0 {
            diff / self.standard_error
        } else if diff <= 1e-9 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McBuyer {
    pub payment: McEstimate,
    pub utility: McEstimate,
    pub win_probability: McEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McProfile {
    pub mechanism: MechanismKind,
    pub params: Vec<f64>,
    pub buyers: Vec<McBuyer>,
    pub revenue: McEstimate,
    /// Smallest ex-post winner utility seen over all samples (0 if nobody won).
    pub min_winner_utility: f64,
    /// Largest ex-post payment over all samples.
    pub max_payment: f64,
}

impl McProfile {
    /// Largest standard score of any quadrature quantity in `profile`.
    pub fn max_standard_score(&self, profile: &OutcomeProfile) -> f64 {
        let per_buyer = self
            .buyers
            .iter()
            .zip(&profile.buyers)
            .flat_map(|(mc, q)| {
                [
                    mc.payment.standard_score(q.payment),
                    mc.utility.standard_score(q.utility),
                    mc.win_probability.standard_score(q.win_probability),
                ]
            })
            .fold(0.0, f64::max);
        per_buyer.max(self.revenue.standard_score(profile.revenue))
    }
}

#[derive(Debug, Clone)]
struct Sums {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    min: f64,
    max: f64,
}

impl Sums {
    fn new(k: usize) -> Self {
        Self {
            sum: vec![0.0; k],
            sum_sq: vec![0.0; k],
            min: 0.0,
            max: 0.0,
        }
    }

    fn merge(mut self, other: &Sums) -> Self {
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            *a += b;
        }
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
        self
    }
}

/// Per-sample observation: fills `out` with the sampled quantities and
/// returns `(min_tracked, max_tracked)` for that sample.
trait Observe: Sync {
    fn width(&self) -> usize;
    fn observe(&self, q: &[f64], out: &mut [f64]) -> Result<(f64, f64)>;
}

fn run_block<O: Observe>(obs: &O, n: usize, seed: u64, block: usize, count: usize) -> Result<Sums> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block as u64);
    let mut sums = Sums::new(obs.width());
    let mut q = vec![0.0; n];
    let mut out = vec![0.0; obs.width()];
    for _ in 0..count {
        for x in q.iter_mut() {
            *x = rng.gen::<f64>();
        }
        let (lo, hi) = obs.observe(&q, &mut out)?;
        sums.min = sums.min.min(lo);
        sums.max = sums.max.max(hi);
        for (k, &v) in out.iter().enumerate() {
            sums.sum[k] += v;
            sums.sum_sq[k] += v * v;
        }
    }
    Ok(sums)
}

fn sample<O: Observe>(obs: &O, n: usize, samples: usize, seed: u64) -> Result<Sums> {
    if samples < MIN_SAMPLES {
        return Err(Error::InvalidSpec(format!(
            "Monte Carlo needs at least {MIN_SAMPLES} samples, got {samples}"
        )));
    }
    let blocks = samples.div_ceil(BLOCK_SAMPLES);
    let count = |b: usize| BLOCK_SAMPLES.min(samples - b * BLOCK_SAMPLES);
    #[cfg(feature = "parallel")]
    let parts: Vec<Result<Sums>> = {
        use rayon::prelude::*;
        (0..blocks)
            .into_par_iter()
            .map(|b| run_block(obs, n, seed, b, count(b)))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Result<Sums>> = (0..blocks)
        .map(|b| run_block(obs, n, seed, b, count(b)))
        .collect();
    let mut total = Sums::new(obs.width());
    for p in parts {
        total = total.merge(&p?);
    }
    Ok(total)
}

struct OutcomeObserver<'a> {
    auction: &'a PreparedAuction,
}

impl Observe for OutcomeObserver<'_> {
    // Per buyer payment, utility, win indicator; then revenue.
    fn width(&self) -> usize {
        3 * self.auction.n() + 1
    }

    fn observe(&self, q: &[f64], out: &mut [f64]) -> Result<(f64, f64)> {
        out.fill(0.0);
        let o = self.auction.allocate(q)?;
        let n = self.auction.n();
        match o.winner {
            Some(w) => {
                out[3 * w] = o.payment;
                out[3 * w + 1] = o.utilities[w];
                out[3 * w + 2] = 1.0;
                out[3 * n] = o.payment - self.auction.lambda;
                Ok((o.utilities[w].min(0.0), o.payment))
            }
            None => Ok((0.0, 0.0)),
        }
    }
}

/// Monte Carlo estimates of every per-buyer expectation and the seller's
/// revenue, from `samples` uniform quantile profiles.
pub fn mc_outcome_profile(
    spec: &MechanismSpec,
    scenario: &Scenario,
    samples: usize,
    seed: u64,
) -> Result<McProfile> {
    let auction = PreparedAuction::new(spec, scenario)?;
    let n = auction.n();
    let sums = sample(&OutcomeObserver { auction: &auction }, n, samples, seed)?;
    let est = |k: usize| McEstimate::from_sums(sums.sum[k], sums.sum_sq[k], samples, seed);
    Ok(McProfile {
        mechanism: spec.kind,
        params: spec.params.clone(),
        buyers: (0..n)
            .map(|i| McBuyer {
                payment: est(3 * i),
                utility: est(3 * i + 1),
                win_probability: est(3 * i + 2),
            })
            .collect(),
        revenue: est(3 * n),
        min_winner_utility: sums.min,
        max_payment: sums.max,
    })
}

/// Bid deviations applied pointwise to the truthful bid function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationGrid {
    pub scales: Vec<f64>,
    pub shifts: Vec<f64>,
}

impl Default for DeviationGrid {
    fn default() -> Self {
        Self {
            scales: vec![0.5, 0.8, 0.9, 1.1, 1.25, 2.0],
            shifts: vec![-0.1, -0.05, 0.05, 0.1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Deviation {
    Scale { factor: f64 },
    Shift { amount: f64 },
}

impl Deviation {
    /// The deviated bid function, clamped to `[0, 1]`.
    pub fn apply(&self, truthful: &QuantileFunction) -> QuantileFunction {
        let (scale, shift) = match *self {
            Deviation::Scale { factor } => (factor, 0.0),
            Deviation::Shift { amount } => (1.0, amount),
        };
        QuantileFunction::Affine {
            base: Box::new(truthful.clone()),
            scale,
            shift,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationGain {
    pub buyer: usize,
    pub deviation: Deviation,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub mechanism: MechanismKind,
    pub gains: Vec<DeviationGain>,
    pub max_gain: f64,
}

impl DeviationReport {
    pub fn best(&self) -> Option<&DeviationGain> {
        self.gains.iter().max_by(|a, b| a.gain.total_cmp(&b.gain))
    }
}

/// Expected utility gain of every single-buyer deviation in `grid` against
/// truthful bidding, with the others truthful.
pub fn bcic_deviation_test(
    kind: MechanismKind,
    scenario: &Scenario,
    theta: &[f64],
    grid: &DeviationGrid,
    quad: QuadratureConfig,
) -> Result<DeviationReport> {
    for (i, b) in scenario.buyers.iter().enumerate() {
        if b.value_qf.as_ref().is_some_and(|v| v != &b.qf) {
            return Err(Error::PreconditionViolation(format!(
                "buyer {i} does not bid truthfully in the baseline"
            )));
        }
    }
    let spec = MechanismSpec::new(kind, theta.to_vec());
    let baseline = Evaluator::new(&spec, scenario, quad)?.buyers();
    let deviations: Vec<Deviation> = grid
        .scales
        .iter()
        .map(|&factor| Deviation::Scale { factor })
        .chain(grid.shifts.iter().map(|&amount| Deviation::Shift { amount }))
        .collect();
    let mut gains = Vec::new();
    for i in 0..scenario.n() {
        for &deviation in &deviations {
            let mut buyers = scenario.buyers.clone();
            let truthful = buyers[i].qf.clone();
            buyers[i] = Buyer {
                qf: deviation.apply(&truthful),
                budget: buyers[i].budget,
                value_qf: Some(truthful),
            };
            let deviated = Scenario {
                lambda: scenario.lambda,
                buyers,
            };
            let u = Evaluator::new(&spec, &deviated, quad)?.buyer(i).utility;
            gains.push(DeviationGain {
                buyer: i,
                deviation,
                gain: u - baseline[i].utility,
            });
        }
    }
    let max_gain = gains.iter().map(|g| g.gain).fold(f64::NEG_INFINITY, f64::max);
    Ok(DeviationReport {
        mechanism: kind,
        gains,
        max_gain,
    })
}

/// Bid strategy that plays the cells of a monotone function in permuted
/// order: cell `j` of `[0, 1]` is mapped onto cell `order[j]`.
struct CellPermutation {
    order: Vec<usize>,
}

impl CellPermutation {
    fn map(&self, q: f64) -> f64 {
        let k = self.order.len();
        let x = q * k as f64;
        let j = (x.floor() as usize).min(k - 1);
        (self.order[j] as f64 + (x - j as f64)) / k as f64
    }
}

struct PairedUtility<'a> {
    auction: &'a PreparedAuction,
    value: &'a QuantileFunction,
    permutation: &'a CellPermutation,
    buyer: usize,
}

impl PairedUtility<'_> {
    fn utility(&self, played: &[f64], own: f64) -> Result<f64> {
        let (winner, payment) = self.auction.resolve(played)?;
        Ok(if winner == Some(self.buyer) {
            self.value.at(own) - payment
        } else {
            0.0
        })
    }
}

impl Observe for PairedUtility<'_> {
    fn width(&self) -> usize {
        1
    }

    fn observe(&self, q: &[f64], out: &mut [f64]) -> Result<(f64, f64)> {
        let own = q[self.buyer];
        let sorted = self.utility(q, own)?;
        let mut scrambled_q = q.to_vec();
        scrambled_q[self.buyer] = self.permutation.map(own);
        let scrambled = self.utility(&scrambled_q, own)?;
        out[0] = sorted - scrambled;
        Ok((0.0, 0.0))
    }
}

/// Utility change of `buyer` when a scrambled bid strategy is replaced by its
/// increasing rearrangement, estimated with common random numbers.
///
/// `levels[j]` is the bid played at the midpoint of the `j`-th of
/// `levels.len()` equal quantile cells. The rearrangement interpolates the
/// sorted levels through the cell midpoints (flat beyond the outer ones); the
/// scrambled strategy plays the same function with its cells permuted, so the
/// two have identical bid distributions. Utilities use the scenario's value
/// function for `buyer`.
pub fn rearrangement_dominance_test(
    scenario: &Scenario,
    spec: &MechanismSpec,
    buyer: usize,
    levels: &[f64],
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if buyer >= scenario.n() {
        return Err(Error::InvalidSpec(format!("no buyer {buyer}")));
    }
    if spec.kind.ranks_virtual_bids() {
        return Err(Error::PreconditionViolation(
            "rearrangement needs a mechanism that ranks raw bids".into(),
        ));
    }
    if levels.len() < 2 {
        return Err(Error::InvalidSpec("need at least two bid levels".into()));
    }
    let k = levels.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| levels[a].total_cmp(&levels[b]));
    // order[r] is the cell holding the r-th smallest level; invert it.
    let mut rank = vec![0; k];
    for (r, &j) in order.iter().enumerate() {
        rank[j] = r;
    }
    let sorted: Vec<f64> = order.iter().map(|&j| levels[j]).collect();
    let mut grid = vec![0.0];
    let mut values = vec![sorted[0]];
    for (r, &v) in sorted.iter().enumerate() {
        grid.push((r as f64 + 0.5) / k as f64);
        values.push(v);
    }
    grid.push(1.0);
    values.push(sorted[k - 1]);
    let rearranged = QuantileFunction::piecewise_linear(grid, values)?;
    rearranged.validate_bidding()?;

    let mut with_bid = scenario.clone();
    let value = with_bid.buyers[buyer].value_qf().clone();
    with_bid.buyers[buyer].qf = rearranged;
    with_bid.buyers[buyer].value_qf = Some(value.clone());
    let auction = PreparedAuction::new(spec, &with_bid)?;
    let sums = sample(
        &PairedUtility {
            auction: &auction,
            value: &value,
            permutation: &CellPermutation { order: rank },
            buyer,
        },
        scenario.n(),
        samples,
        seed,
    )?;
    Ok(McEstimate::from_sums(sums.sum[0], sums.sum_sq[0], samples, seed))
}
