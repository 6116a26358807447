#![allow(dead_code)]

use auctionlab::{Buyer, QuantileFunction, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn example() -> Scenario {
    auctionlab::example::example_scenario()
}

/// Strictly increasing piecewise-linear bid function with 2 to 5 pieces.
/// With `concave`, slopes decrease across pieces, which keeps the virtual
/// bid function strictly increasing.
pub fn random_pl(rng: &mut ChaCha8Rng, concave: bool) -> QuantileFunction {
    let pieces = rng.gen_range(2..=5);
    let mut cuts: Vec<f64> = (0..pieces - 1).map(|_| rng.gen_range(0.1..0.9)).collect();
    cuts.sort_by(f64::total_cmp);
    let mut grid = vec![0.0];
    for c in cuts {
        if c - grid.last().unwrap() > 0.05 {
            grid.push(c);
        }
    }
    grid.push(1.0);
    let mut slopes: Vec<f64> = (0..grid.len() - 1).map(|_| rng.gen_range(0.2..2.0)).collect();
    if concave {
        slopes.sort_by(|a, b| b.total_cmp(a));
        for k in 1..slopes.len() {
            if slopes[k] > 0.9 * slopes[k - 1] {
                slopes[k] = 0.9 * slopes[k - 1];
            }
        }
    }
    let lo = rng.gen_range(0.0..0.15);
    let mut values = vec![0.0];
    for (k, s) in slopes.iter().enumerate() {
        let prev = values[k];
        values.push(prev + s * (grid[k + 1] - grid[k]));
    }
    let top = rng.gen_range(0.6..1.0);
    let span = values.last().unwrap();
    let values = values.iter().map(|v| lo + (top - lo) * v / span).collect();
    QuantileFunction::piecewise_linear(grid, values).unwrap()
}

pub fn random_scenario(rng: &mut ChaCha8Rng, n: usize, concave: bool) -> Scenario {
    let lambda = rng.gen_range(0.02..0.15);
    let buyers = (0..n)
        .map(|_| Buyer::truthful(random_pl(rng, concave), rng.gen_range(0.02..0.3)))
        .collect();
    Scenario::new(lambda, buyers).unwrap()
}

/// Symmetric scenario over a few smooth and piecewise-linear families.
pub fn random_symmetric(rng: &mut ChaCha8Rng) -> Scenario {
    let n = rng.gen_range(2..=4);
    let lambda = rng.gen_range(0.05..0.15);
    let qf = match rng.gen_range(0..3) {
        0 => {
            let lo = rng.gen_range(0.0..0.2);
            QuantileFunction::uniform(lo, rng.gen_range(0.7..1.0)).unwrap()
        }
        1 => QuantileFunction::SaturatingTail {
            offset: rng.gen_range(0.0..0.1),
            scale: rng.gen_range(0.6..0.9),
            rate: rng.gen_range(0.5..3.0),
            join: 0.0,
        },
        _ => random_pl(rng, true),
    };
    let budget = rng.gen_range(0.03..0.2);
    Scenario::symmetric(qf, budget, n, lambda).unwrap()
}
