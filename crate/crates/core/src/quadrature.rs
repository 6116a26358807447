//! One-dimensional composite quadrature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_NODES: usize = 16;
pub const DEFAULT_NODES: usize = 4096;

const GL8_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureRule {
    Trapezoid,
    GaussLegendre,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    /// Function evaluations per unit-length integral.
    pub nodes: usize,
    pub rule: QuadratureRule,
    /// Split quantile integrals where the own score crosses the reserve.
    pub split_at_reserve: bool,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            nodes: DEFAULT_NODES,
            rule: QuadratureRule::Trapezoid,
            split_at_reserve: true,
        }
    }
}

impl QuadratureConfig {
    pub fn with_nodes(nodes: usize) -> Self {
        Self {
            nodes,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes < MIN_NODES {
            return Err(Error::InvalidSpec(format!(
                "quadrature needs at least {MIN_NODES} nodes, got {}",
                self.nodes
            )));
        }
        Ok(())
    }

    pub fn doubled(&self) -> Self {
        Self {
            nodes: self.nodes * 2,
            ..*self
        }
    }

    /// Integral of `f` over `[a, b]` with a node budget proportional to `b - a`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let intervals = ((self.nodes as f64 * (b - a)).ceil() as usize).max(4);
        match self.rule {
            QuadratureRule::Trapezoid => trapezoid(&f, a, b, intervals),
            QuadratureRule::GaussLegendre => {
                gauss_legendre_composite(&f, a, b, (intervals / 8).max(1))
            }
        }
    }

    /// Integral of `f` over `[a, b]`, splitting at every cut strictly inside.
    pub fn integrate_split(&self, f: impl Fn(f64) -> f64, a: f64, b: f64, cuts: &[f64]) -> f64 {
        let mut points = vec![a];
        points.extend(cuts.iter().copied().filter(|&c| c > a && c < b));
        points.push(b);
        points.sort_by(f64::total_cmp);
        points.dedup();
        points
            .windows(2)
            .map(|w| self.integrate(&f, w[0], w[1]))
            .sum()
    }
}

pub fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let h = (b - a) / intervals as f64;
    let mut sum = 0.5 * (f(a) + f(b));
    for k in 1..intervals {
        sum += f(a + k as f64 * h);
    }
    sum * h
}

/// Composite 8-point Gauss–Legendre rule over `panels` equal panels.
pub fn gauss_legendre_composite(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        let half = 0.5 * h;
        let mut s = 0.0;
        for (x, w) in GL8_NODES.iter().zip(GL8_WEIGHTS) {
            s += w * (f(mid - half * x) + f(mid + half * x));
        }
        total += s * half;
    }
    total
}

/// Nodes and weights of the 8-point rule mapped onto `[a, b]`, in increasing order.
pub fn gauss_legendre_nodes(a: f64, b: f64) -> [(f64, f64); 8] {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut out = [(0.0, 0.0); 8];
    for k in 0..4 {
        out[3 - k] = (mid - half * GL8_NODES[k], half * GL8_WEIGHTS[k]);
        out[4 + k] = (mid + half * GL8_NODES[k], half * GL8_WEIGHTS[k]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_is_exact_for_degree_fifteen() {
        let v = gauss_legendre_composite(|x| x.powi(15) + x.powi(4), 0.0, 1.0, 1);
        assert!((v - (1.0 / 16.0 + 0.2)).abs() < 1e-15);
        let nodes = gauss_legendre_nodes(0.0, 2.0);
        assert!(nodes.windows(2).all(|w| w[0].0 < w[1].0));
        let total: f64 = nodes.iter().map(|(_, w)| w).sum();
        assert!((total - 2.0).abs() < 1e-14);
    }

    #[test]
    fn trapezoid_converges_quadratically() {
        let exact = 1.0 - (1.0f64).cos();
        let e1 = (trapezoid(f64::sin, 0.0, 1.0, 64) - exact).abs();
        let e2 = (trapezoid(f64::sin, 0.0, 1.0, 128) - exact).abs();
        assert!((e1 / e2 - 4.0).abs() < 0.01);
    }

    #[test]
    fn split_handles_kinks_exactly() {
        let cfg = QuadratureConfig::with_nodes(16);
        let f = |x: f64| (x - 0.37).abs();
        let v = cfg.integrate_split(f, 0.0, 1.0, &[0.37]);
        let exact = 0.5 * (0.37f64.powi(2) + 0.63f64.powi(2));
        assert!((v - exact).abs() < 1e-15);
    }

    #[test]
    fn rejects_tiny_node_counts() {
        assert!(QuadratureConfig::with_nodes(8).validate().is_err());
        assert!(QuadratureConfig::default().validate().is_ok());
    }
}
